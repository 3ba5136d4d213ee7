#pragma once

#include <stdexcept>
#include <string>

namespace leq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
class PreconditionError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// An iterative solver did not reach its tolerance.
class SolverFailure : public Error {
public:
    using Error::Error;
};

/// A loss or gradient became non-finite during training.
class TrainingDivergence : public Error {
public:
    using Error::Error;
};

/// Malformed, truncated or corrupted file.
class FormatError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace leq

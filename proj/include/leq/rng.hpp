#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace leq {

/// Seeded random stream with platform-independent uniform and normal draws.
///
/// std::uniform_real_distribution and std::normal_distribution are not
/// specified bit-exactly by the standard, so the conversions live here.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller; caches the second variate.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Child stream whose seed is derived from this stream's seed and a name.
    /// Does not advance this stream.
    Rng fork(std::string_view name) const;

    std::string serialize() const;
    void deserialize(const std::string& state);

    std::uint64_t seed() const { return seed_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// splitmix64 finalizer; used to derive independent named streams.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view name);

}  // namespace leq

#pragma once

// Central finite-difference oracles for gradient tests.

#include <cmath>
#include <functional>

#include "leq/nn/mlp.hpp"

namespace gradcheck {

inline constexpr double kStep = 1e-5;

/// Per-coordinate tolerance max(1e-4, 1e-3 |grad|).
inline bool matches(const Eigen::Ref<const Eigen::VectorXd>& analytic, const Eigen::Ref<const Eigen::VectorXd>& fd)
{
    if (analytic.size() != fd.size()) return false;
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
        const double tol = std::max(1e-4, 1e-3 * std::abs(fd[i]));
        if (!(std::abs(analytic[i] - fd[i]) <= tol)) return false;
    }
    return true;
}

inline Eigen::VectorXd vector_fd(Eigen::VectorXd x, const std::function<double(const Eigen::VectorXd&)>& f)
{
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + kStep;
        const double up = f(x);
        x[i] = orig - kStep;
        const double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * kStep);
    }
    return g;
}

inline Eigen::VectorXd param_fd(const leq::nn::Mlp& net, const std::function<double(const leq::nn::Mlp&)>& f)
{
    leq::nn::Mlp probe = net;
    return vector_fd(net.params(), [&](const Eigen::VectorXd& p) {
        probe.params() = p;
        return f(probe);
    });
}

inline Eigen::MatrixXd input_fd(const Eigen::MatrixXd& x, const std::function<double(const Eigen::MatrixXd&)>& f)
{
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
    const Eigen::VectorXd g = vector_fd(flat, [&](const Eigen::VectorXd& v) {
        return f(Eigen::Map<const Eigen::MatrixXd>(v.data(), x.rows(), x.cols()));
    });
    return Eigen::Map<const Eigen::MatrixXd>(g.data(), x.rows(), x.cols());
}

}  // namespace gradcheck

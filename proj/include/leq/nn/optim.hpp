#pragma once

#include <cstdint>

#include <json.hpp>

#include "leq/nn/mlp.hpp"

namespace leq::nn {

/// Bias-corrected Adam over a flat parameter vector.
class Adam {
public:
    Adam() = default;
    Adam(Eigen::Index size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(Vector& params, const Vector& grad);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    std::int64_t steps() const { return t_; }
    const Vector& first_moment() const { return m_; }
    const Vector& second_moment() const { return v_; }

    /// Moments and counter, for checkpoints.
    nlohmann::json state_header() const;
    void restore(const nlohmann::json& header, Vector m, Vector v);

private:
    Vector m_;
    Vector v_;
    std::int64_t t_ = 0;
    double lr_ = 1e-3;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
};

/// Exponential moving average shadow of a parameter vector.
class EmaTracker {
public:
    EmaTracker() = default;
    EmaTracker(const Vector& init, double decay);

    /// shadow <- decay * shadow + (1 - decay) * params
    void update(const Vector& params);
    void reset(const Vector& params) { shadow_ = params; }

    const Vector& shadow() const { return shadow_; }
    double decay() const { return decay_; }

private:
    Vector shadow_;
    double decay_ = 0.995;
};

}  // namespace leq::nn

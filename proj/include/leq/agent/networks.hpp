#pragma once

#include <cstdint>
#include <vector>

#include "leq/nn/mlp.hpp"

namespace leq::agent {

using nn::Matrix;
using nn::Vector;

/// Deterministic tanh-squashed policy S -> A.
class Policy {
public:
    struct Tape {
        nn::MlpTape mlp;
        Matrix action;
    };

    Policy() = default;
    Policy(int obs_dim, int act_dim, const std::vector<int>& hidden, std::uint64_t seed);

    Matrix act(const Matrix& states) const;
    Matrix act(const Matrix& states, Tape& tape) const;
    /// Adds the parameter gradient of <action, g_action>; returns the state gradient.
    Matrix backward(const Tape& tape, const Matrix& g_action, Vector* param_grad) const;

    nn::Mlp& net() { return net_; }
    const nn::Mlp& net() const { return net_; }
    Vector& params() { return net_.params(); }
    const Vector& params() const { return net_.params(); }
    int obs_dim() const { return net_.spec().input_dim; }
    int act_dim() const { return net_.spec().output_dim; }

private:
    nn::Mlp net_;
};

/// Q(s, a) network (S + A) -> 1.
class Critic {
public:
    struct Tape {
        nn::MlpTape mlp;
    };

    Critic() = default;
    Critic(int obs_dim, int act_dim, const std::vector<int>& hidden, std::uint64_t seed);

    Vector q(const Matrix& states, const Matrix& actions) const;
    Vector q(const Matrix& states, const Matrix& actions, Tape& tape) const;
    /// Same network evaluated with other parameters (EMA shadow).
    Vector q_with(const Vector& params, const Matrix& states, const Matrix& actions) const;
    /// Adds the parameter gradient of <q, g_q>; returns (state, action) gradients.
    std::pair<Matrix, Matrix> backward(const Tape& tape, const Vector& g_q, Vector* param_grad) const;

    nn::Mlp& net() { return net_; }
    const nn::Mlp& net() const { return net_; }
    Vector& params() { return net_.params(); }
    const Vector& params() const { return net_.params(); }
    int obs_dim() const { return obs_dim_; }
    int act_dim() const { return net_.spec().input_dim - obs_dim_; }

private:
    Matrix join(const Matrix& states, const Matrix& actions) const;

    nn::Mlp net_;
    int obs_dim_ = 0;
};

}  // namespace leq::agent

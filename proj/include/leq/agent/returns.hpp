#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "leq/agent/config.hpp"

namespace leq::agent {

/// One rollout's rewards r_0..r_{L-1} and bootstrap values v_0..v_L, where
/// v_t = Q(s_t, pi(s_t)). When terminal, v_L is ignored (treated as 0).
struct RolloutValues {
    std::vector<double> rewards;
    std::vector<double> values;
    bool terminal = false;

    int length() const { return static_cast<int>(rewards.size()); }
};

/// G_{t:t+N} = sum_{i<N} gamma^i r_{t+i} + gamma^N v_{t+N}; requires t + N <= L.
double n_step_return(const RolloutValues& r, int t, int n, double gamma);

/// Mixture weights over G_{t:t+1..t+n}: (1 - lambda) lambda^{i-1} / (1 - lambda^n).
std::vector<double> lambda_weights(int n, double lambda);

/// Weights for a critic-target mode: lambda mixture, one-step, or the
/// longest available return.
std::vector<double> target_weights(CriticTarget mode, int n, double lambda);

struct LambdaReturnTable {
    std::vector<std::vector<double>> n_step;   // [t][i-1] = G_{t:t+i}, 1 <= i <= L-t
    std::vector<std::vector<double>> weights;  // [t][i-1]
    std::vector<double> q;                     // Q_t^lambda, 0 <= t < L
};

LambdaReturnTable lambda_returns(const RolloutValues& r, double lambda, double gamma,
                                 CriticTarget mode = CriticTarget::lambda);

/// Linear form of the targets: q_t = sum_k R(t, k) r_k + sum_j V(t, j) v_j.
struct ReturnCoefficients {
    Eigen::MatrixXd reward;  // L x L
    Eigen::MatrixXd value;   // L x (L+1); column L is zero for terminal rollouts
};

ReturnCoefficients return_coefficients(int length, bool terminal, double lambda, double gamma,
                                       CriticTarget mode = CriticTarget::lambda);

}  // namespace leq::agent

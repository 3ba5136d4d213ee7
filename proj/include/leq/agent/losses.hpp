#pragma once

#include <vector>

#include "leq/agent/config.hpp"
#include "leq/agent/networks.hpp"
#include "leq/env/dataset.hpp"
#include "leq/model/world_model.hpp"

namespace leq::agent {

using model::EnsembleWorldModel;
using model::ImaginedBatch;

/// Critic evaluations along an imagined batch.
struct RolloutTargets {
    Matrix values;    // (H+1) x N: Q(s_t, pi(s_t))
    Matrix q_taken;   // H x N: Q(s_t, a_t) with the rollout action
    Matrix targets;   // H x N: return targets (lambda mixture by default)
};

/// Computes bootstrap values and return targets for every alive step.
/// Entries past a rollout's length are zero. For t < H the recorded
/// pre-noise actions stand in for pi(s_t), so policy should be the one that
/// generated the batch.
RolloutTargets rollout_targets(const ImaginedBatch& batch, const Critic& critic, const Policy& policy,
                               double lambda, double gamma, CriticTarget mode = CriticTarget::lambda);

/// Return targets from given rewards and bootstrap values.
Matrix targets_from_values(const ImaginedBatch& batch, const Matrix& values, double lambda, double gamma,
                           CriticTarget mode);

/// Mean over alive steps of L2^tau(Q(s_t, pi(s_t)) - target_t); targets and
/// policy actions are constants.
double critic_loss_model(const ImaginedBatch& batch, const Matrix& targets, const Critic& critic, double tau,
                         Vector* grad);

/// Mean of 0.5 (Q(s, a) - [r + gamma (1 - d) Q(s', pi(s'))])^2, target constant.
double critic_loss_env(const env::TransitionBatch& batch, const Critic& critic, const Policy& policy, double gamma,
                       Vector* grad);

/// Mean of (Q(s, a) - Q_shadow(s, a))^2, shadow constant.
double critic_loss_ema(const Matrix& states, const Matrix& actions, const Critic& critic, const Vector& shadow,
                       Vector* grad);

struct CriticLosses {
    double model = 0.0;
    double env = 0.0;
    double ema = 0.0;
    double total = 0.0;
};

/// beta * model + (1 - beta) * env + omega * ema. The EMA term uses the env
/// batch state-actions.
CriticLosses critic_loss_total(const ImaginedBatch& model_batch, const Matrix& targets,
                               const env::TransitionBatch& env_batch, const Critic& critic, const Policy& policy,
                               const Vector& shadow, const AgentConfig& config, Vector* grad);

struct SurrogateResult {
    double loss = 0.0;
    Matrix weights;   // H x N, zero past each rollout's length
    Matrix targets;   // H x N, lambda returns at the evaluated point
    Matrix values;    // (H+1) x N, Q(s_t, pi(s_t)) on the replayed states, zero past length
    int count = 0;    // alive steps
};

/// -mean over alive steps of w_t Q_t^lambda with w_t = |tau - 1(Q(s_t, a_t) > Q_t^lambda)|.
///
/// The rollout is replayed from its start states with the recorded member ids
/// and eps, re-deriving actions from the policy (noise-free), so the gradient
/// flows through rewards, states and actions into the policy parameters. The
/// weights are constants; pass frozen_weights to override them.
SurrogateResult policy_loss_surrogate(const EnsembleWorldModel& model, const ImaginedBatch& batch,
                                      const Critic& critic, const Policy& policy, double tau, double lambda,
                                      double gamma, Vector* grad, const Matrix* frozen_weights = nullptr);

/// -mean over alive steps of Q(s_t, pi(s_t)) on the recorded imagined states.
double policy_loss_q_value(const ImaginedBatch& batch, const Critic& critic, const Policy& policy, Vector* grad);

/// mean over alive steps of min(exp(A_t / alpha), 20) ||pi(s_t) - a_t||^2 with
/// A_t = target_t - Q(s_t, pi(s_t)) held constant.
double awr_policy_loss(const ImaginedBatch& batch, const Matrix& targets, const Critic& critic,
                       const Policy& policy, double alpha, Vector* grad);

inline constexpr double kAwrMaxWeight = 20.0;

/// mean_m(r_m + gamma q_m) - c * std_m(r_m + gamma q_m), population std.
double mobile_lcb_target(const std::vector<double>& rewards, const std::vector<double>& next_q, double gamma,
                         double c);

/// One-step LCB targets for each alive imagined step: every elite predicts
/// (s', r) from (s_t, a_t) with the step's recorded eps, then the penalized
/// ensemble target is formed. Terminal next states bootstrap 0.
Matrix mobile_lcb_targets(const EnsembleWorldModel& model, const ImaginedBatch& batch, const Critic& critic,
                          const Policy& policy, double gamma, double c, const env::TerminationFn& termination);

}  // namespace leq::agent

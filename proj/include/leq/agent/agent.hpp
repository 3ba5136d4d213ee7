#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "leq/agent/config.hpp"
#include "leq/agent/losses.hpp"
#include "leq/agent/networks.hpp"
#include "leq/env/dataset.hpp"
#include "leq/env/env.hpp"
#include "leq/model/world_model.hpp"
#include "leq/nn/checkpoint.hpp"
#include "leq/nn/optim.hpp"
#include "leq/rng.hpp"

namespace leq::agent {

/// Ring buffer of imagination start states; the oldest entry is overwritten
/// once full.
class ModelStateBuffer {
public:
    ModelStateBuffer() = default;
    ModelStateBuffer(int obs_dim, Eigen::Index capacity);

    void insert(const Eigen::Ref<const Vector>& state);
    /// Uniform draws with replacement; requires a non-empty buffer.
    Matrix sample(int n, Rng& rng) const;

    Eigen::Index size() const { return size_; }
    Eigen::Index capacity() const { return data_.cols(); }
    Eigen::Index cursor() const { return cursor_; }
    const Matrix& storage() const { return data_; }
    void restore(Matrix data, Eigen::Index size, Eigen::Index cursor);

private:
    Matrix data_;
    Eigen::Index size_ = 0;
    Eigen::Index cursor_ = 0;
};

/// Minimizes mean ||pi(s) - a||^2 over dataset minibatches; returns the
/// final full-dataset MSE.
double pretrain_bc(const env::TransitionTable& data, Policy& policy, int steps, int batch_size, double lr, Rng& rng);

/// Fitted Q evaluation of a fixed policy: regresses Q(s, a) onto
/// r + gamma (1 - d) Q(s', pi(s')) with the target held constant per step.
/// Returns the final full-dataset Bellman loss (0.5 mean squared error).
double pretrain_fqe(const env::TransitionTable& data, const Policy& policy, Critic& critic, int steps,
                    int batch_size, double lr, double gamma, Rng& rng);

/// Rolls expand_horizon steps from dataset states with exploration noise
/// sigma_exp and inserts every visited pre-step state, until expand_count
/// states have been inserted.
void expand_dataset(ModelStateBuffer& buffer, const env::TransitionTable& data, const EnsembleWorldModel& model,
                    const Policy& policy, const AgentConfig& config, const env::TerminationFn& termination,
                    Rng& rng);

struct TrainMetrics {
    std::int64_t step = 0;
    CriticLosses critic;
    double actor_loss = 0.0;
    double mean_q = 0.0;        // mean Q(s_t, pi(s_t)) over alive imagined steps
    double mean_target = 0.0;   // mean critic target over alive imagined steps
    double mean_length = 0.0;   // mean imagined rollout length
    Eigen::Index buffer_size = 0;
};

/// CSV header matching metrics_row.
std::string metrics_header();
std::string metrics_row(const TrainMetrics& m, double eval_return, double success_rate);

struct EvalResult {
    double mean_return = 0.0;
    double success_rate = 0.0;
    std::vector<double> returns;
};

using ActionFn = std::function<Matrix(const Matrix& states)>;

/// Rolls a deterministic policy in the true environment. Episode i resets
/// from the stream forked as "episode/<i>" of the seed.
EvalResult evaluate_policy(const ActionFn& policy, const env::EnvSpec& spec, int n_episodes, std::uint64_t seed);

/// LEQ training state: networks, optimizers, EMA shadow, D_model and rng.
class LeqAgent {
public:
    LeqAgent(AgentConfig config, const env::OfflineDataset& dataset, const env::EnvSpec& spec,
             std::uint64_t seed);

    /// BC for the actor then FQE for the critic (no-op when config.pretrain is false).
    void pretrain();

    /// One Algorithm-1 iteration: expansion when due, imagination, critic and
    /// actor gradients at the current point, both Adam steps, EMA update.
    TrainMetrics train_step(const EnsembleWorldModel& model);

    const AgentConfig& config() const { return config_; }
    const Policy& policy() const { return policy_; }
    Policy& policy() { return policy_; }
    const Critic& critic() const { return critic_; }
    Critic& critic() { return critic_; }
    const nn::EmaTracker& ema() const { return ema_; }
    const ModelStateBuffer& buffer() const { return buffer_; }
    const env::TransitionTable& data() const { return data_; }
    std::int64_t step() const { return step_; }
    double bc_mse() const { return bc_mse_; }
    double fqe_loss() const { return fqe_loss_; }

    ActionFn action_fn() const;

    nn::Checkpoint checkpoint() const;
    /// Restores networks, optimizers, shadow, buffer, counters and rng.
    void restore(const nn::Checkpoint& ckpt);

private:
    AgentConfig config_;
    env::EnvSpec spec_;
    env::TerminationFn termination_;
    env::TransitionTable data_;
    Policy policy_;
    Critic critic_;
    nn::Adam actor_opt_;
    nn::Adam critic_opt_;
    nn::EmaTracker ema_;
    ModelStateBuffer buffer_;
    Rng rng_;
    std::int64_t step_ = 0;
    double bc_mse_ = 0.0;
    double fqe_loss_ = 0.0;
};

}  // namespace leq::agent

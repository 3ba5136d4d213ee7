#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "leq/env/dataset.hpp"
#include "leq/env/env.hpp"
#include "leq/nn/checkpoint.hpp"
#include "leq/nn/mlp.hpp"
#include "leq/rng.hpp"

namespace leq::model {

using nn::Matrix;
using nn::Vector;

inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;

/// Smooth clamp of a raw log-std into (kLogStdMin, kLogStdMax).
double clamp_log_std(double raw);

/// Gaussian head over (delta state, reward) given (state, action).
///
/// Network output rows: [mean (S+1) ; raw log-std (S+1)], the latter passed
/// through clamp_log_std. Inputs are standardized and outputs de-standardized
/// with stored per-feature mean/std: mean = m + sd * net_mean and log-std =
/// clamp_log_std(net_log_std + log sd).
class DynamicsNet {
public:
    DynamicsNet() = default;
    DynamicsNet(int obs_dim, int act_dim, const std::vector<int>& hidden, std::uint64_t init_seed,
                nn::Activation activation = nn::Activation::tanh);

    int obs_dim() const { return obs_dim_; }
    int act_dim() const { return act_dim_; }
    int head_dim() const { return obs_dim_ + 1; }

    nn::Mlp& net() { return net_; }
    const nn::Mlp& net() const { return net_; }
    const Vector& input_mean() const { return in_mean_; }
    const Vector& input_std() const { return in_std_; }
    const Vector& target_mean() const { return out_mean_; }
    const Vector& target_std() const { return out_std_; }
    void set_normalizer(Vector mean, Vector std);
    void set_target_normalizer(Vector mean, Vector std);

    struct Output {
        Matrix mean;     // (S+1) x N
        Matrix log_std;  // (S+1) x N, clamped
        Matrix raw_log_std;  // before clamping, in target units
    };

    struct Tape {
        nn::MlpTape mlp;
        Output out;
    };

    Output forward(const Matrix& states, const Matrix& actions) const;
    Output forward(const Matrix& states, const Matrix& actions, Tape& tape) const;

    /// Backprop of <mean, g_mean> + <log_std, g_log_std>. Adds into param_grad
    /// if non-null; returns gradients with respect to states and actions.
    std::pair<Matrix, Matrix> backward(const Tape& tape, const Matrix& g_mean, const Matrix& g_log_std,
                                       Vector* param_grad) const;

private:
    Matrix normalized_input(const Matrix& states, const Matrix& actions) const;
    Output head(const Matrix& y) const;

    int obs_dim_ = 0;
    int act_dim_ = 0;
    nn::Mlp net_;
    Vector in_mean_;
    Vector in_std_;
    Vector out_mean_;
    Vector out_std_;
};

/// Mean diagonal-Gaussian negative log-likelihood of (s' - s, r) targets.
double nll_loss(const DynamicsNet& net, const env::TransitionBatch& batch);

/// Same, adding the parameter gradient of the mean loss into grad.
double nll_loss_and_grad(const DynamicsNet& net, const env::TransitionBatch& batch, Vector& grad);

struct EnsembleConfig {
    int members = 7;
    int elites = 5;
    std::vector<int> hidden{64, 64};
    nn::Activation activation = nn::Activation::tanh;
    double lr = 1e-3;
    int batch_size = 256;
    int steps = 4000;        // minibatch steps per member
    int eval_every = 250;    // validation checks; best-validation params are kept
    double holdout = 0.1;    // fraction of trajectories held out
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const EnsembleConfig& c);
void from_json(const nlohmann::json& j, EnsembleConfig& c);

class EnsembleWorldModel {
public:
    EnsembleWorldModel() = default;

    int size() const { return static_cast<int>(members_.size()); }
    int obs_dim() const { return members_.empty() ? 0 : members_.front().obs_dim(); }
    int act_dim() const { return members_.empty() ? 0 : members_.front().act_dim(); }

    const DynamicsNet& member(int i) const { return members_[static_cast<std::size_t>(i)]; }
    DynamicsNet& member(int i) { return members_[static_cast<std::size_t>(i)]; }
    int member_id(int i) const { return ids_[static_cast<std::size_t>(i)]; }
    const std::vector<double>& validation_nll() const { return val_nll_; }

    /// Member indices of the elites, ordered by member id.
    const std::vector<int>& elites() const { return elites_; }
    std::vector<bool> elite_mask() const;

    /// Draws an elite uniformly; returns its member index.
    int sample_elite(Rng& rng) const;

    void add_member(DynamicsNet net, int id, double val_nll);
    /// Picks the n_elites lowest finite validation NLLs; throws if too few are finite.
    void select_elites(int n_elites);

    nn::Checkpoint checkpoint() const;
    static EnsembleWorldModel from_checkpoint(const nn::Checkpoint& ckpt);

private:
    std::vector<DynamicsNet> members_;
    std::vector<int> ids_;
    std::vector<double> val_nll_;
    std::vector<int> elites_;
};

/// Trains every member on the same per-trajectory 90/10 split with its own
/// init seed and shuffling stream, then selects elites by validation NLL.
EnsembleWorldModel train_ensemble(const env::OfflineDataset& dataset, const EnsembleConfig& config);

struct StepSample {
    Vector next_state;
    double reward = 0.0;
    int member = 0;
    Vector eps;  // S+1
};

/// One reparameterized draw: elite chosen uniformly, then mean + std * eps.
StepSample sample_step(const EnsembleWorldModel& model, const Vector& state, const Vector& action, Rng& rng);

/// Deterministic replay of a draw with a fixed member and eps.
std::pair<Vector, double> replay_step(const EnsembleWorldModel& model, int member, const Vector& eps,
                                      const Vector& state, const Vector& action);

/// Batched deterministic policy used during imagination: actions in [-1, 1].
using PolicyFn = std::function<Matrix(const Matrix& states)>;

/// Batch of imagined rollouts stored time-major.
///
/// Column n is alive for steps t < length[n]. states[t] is defined for
/// t <= length[n]; later columns repeat the last state. terminal[n] marks a
/// rollout that stopped because its final state satisfied the termination
/// rule; truncated[n] marks a non-finite model prediction.
struct ImaginedBatch {
    int horizon = 0;
    std::vector<Matrix> states;        // H+1 of S x N
    std::vector<Matrix> actions;       // H of A x N (after noise and clipping)
    std::vector<Matrix> policy_actions;  // H of A x N, before noise
    Matrix rewards;                    // H x N
    std::vector<Matrix> eps;           // H of (S+1) x N
    Eigen::MatrixXi members;           // H x N, -1 when not alive
    std::vector<int> length;
    std::vector<bool> terminal;
    std::vector<bool> truncated;

    Eigen::Index size() const { return rewards.cols(); }
    int total_steps() const;
};

/// Rolls the policy through per-step elite draws from every start column.
/// A start state that already satisfies the termination rule yields a
/// zero-length terminal rollout.
ImaginedBatch imagine_rollout(const EnsembleWorldModel& model, const PolicyFn& policy, const Matrix& start_states,
                              int horizon, const env::TerminationFn& termination, double action_noise_sigma,
                              Rng& rng);

/// Per-step model evaluations recorded for differentiating a rollout.
struct StepTapes {
    std::vector<int> members;                 // distinct members used at this step
    std::vector<std::vector<Eigen::Index>> columns;  // columns per member
    std::vector<DynamicsNet::Tape> tapes;
};

/// Re-evaluates step t of a rollout on given (state, action) columns with
/// the recorded member ids and eps. Returns (next_state, reward) for alive
/// columns (other columns are copied from states / zero).
std::pair<Matrix, Vector> replay_batch_step(const EnsembleWorldModel& model, const ImaginedBatch& batch, int t,
                                            const Matrix& states, const Matrix& actions, StepTapes* tapes);

/// Reverse pass of replay_batch_step given cotangents on next_state and
/// reward. Returns (g_state, g_action); g_state includes the identity path.
std::pair<Matrix, Matrix> backward_batch_step(const EnsembleWorldModel& model, const ImaginedBatch& batch, int t,
                                              const StepTapes& tapes, const Matrix& g_next, const Vector& g_reward);

}  // namespace leq::model

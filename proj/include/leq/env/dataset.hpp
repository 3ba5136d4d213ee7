#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "leq/env/env.hpp"
#include "leq/rng.hpp"

namespace leq::env {

using Matrix = Eigen::MatrixXd;

struct Transition {
    Vector state;
    Vector action;
    double reward = 0.0;
    Vector next_state;
    bool terminal = false;

    bool operator==(const Transition&) const = default;
};

using Trajectory = std::vector<Transition>;

enum class RewardNormalization { none, minmax_return, sparse_shift };

std::string to_string(RewardNormalization mode);
RewardNormalization normalization_from_string(const std::string& name);

enum class Collector { random, medium, expert, mixed };

std::string to_string(Collector c);
Collector collector_from_string(const std::string& name);

struct OfflineDataset {
    std::vector<Trajectory> trajectories;
    int obs_dim = 0;
    int act_dim = 0;
    RewardNormalization normalization = RewardNormalization::none;
    std::string env_id;
    std::string collector;
    std::uint64_t seed = 0;

    std::size_t num_transitions() const;
    std::vector<double> returns() const;

    bool operator==(const OfflineDataset&) const = default;
};

/// Scripted controller action for the environment (expert route following /
/// bang-bang forward). Deterministic.
Vector expert_action(const EnvSpec& spec, const Vector& state, std::size_t& waypoint);

/// Rolls scripted controllers in the true environment.
///
/// random: uniform actions; expert: route following; medium: expert plus
/// N(0, 0.5^2) action noise, clipped; mixed: each trajectory is random or
/// medium with probability 1/2. point_maze rewards are stored as the 0/1
/// goal indicator (pair with RewardNormalization::sparse_shift); dense_chain
/// rewards are stored as produced by env_step.
OfflineDataset collect_dataset(const EnvSpec& spec, Collector collector, int n_trajectories, std::uint64_t seed);

/// Returns a copy with rewards rescaled or shifted.
///
/// minmax_return: r / (max trajectory return - min trajectory return);
/// requires >= 2 trajectories and a nonzero spread. sparse_shift: r - 1.
OfflineDataset normalize_rewards(const OfflineDataset& dataset, RewardNormalization mode);

/// Binary dataset file.
///
/// "LEQD" | u32 version | u64 metadata length | metadata JSON |
/// per trajectory: u64 length T, then f64 arrays states (T*S), actions
/// (T*A), rewards (T), next_states (T*S), terminals (T, 0/1) |
/// u32 CRC32 of everything before it. Integers and floats little-endian.
std::string encode_dataset(const OfflineDataset& dataset);
OfflineDataset decode_dataset(std::string_view bytes);
void save_dataset(const OfflineDataset& dataset, const std::string& path);
OfflineDataset load_dataset(const std::string& path);

inline constexpr std::uint32_t kDatasetVersion = 1;

/// Column-major transition table for minibatch sampling.
struct TransitionTable {
    Matrix states;       // S x N
    Matrix actions;      // A x N
    Vector rewards;      // N
    Matrix next_states;  // S x N
    Vector terminals;    // N, 0/1

    Eigen::Index size() const { return states.cols(); }
};

TransitionTable flatten(const OfflineDataset& dataset);

struct TransitionBatch {
    Matrix states, actions, next_states;
    Vector rewards, terminals;
};

TransitionBatch sample_batch(const TransitionTable& table, int batch_size, Rng& rng);
TransitionBatch gather(const TransitionTable& table, const std::vector<Eigen::Index>& indices);

}  // namespace leq::env

#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "leq/rng.hpp"

namespace leq::env {

using Vector = Eigen::VectorXd;

enum class EnvId { point_maze, dense_chain };

/// Axis-aligned wall segment; either x0 == x1 or y0 == y1.
struct Wall {
    double x0, y0, x1, y1;
};

struct EnvSpec {
    EnvId id = EnvId::point_maze;
    std::string name;  // point_maze_u, point_maze_s_corridor, point_maze_large_spiral, dense_chain
    int horizon = 200;

    // point_maze
    double width = 0.0;
    double height = 0.0;
    std::vector<Wall> walls;  // includes the outer boundary
    Vector start;
    Vector goal;
    double goal_radius = 0.5;
    double step_size = 0.25;
    double start_noise = 0.25;
    std::vector<Vector> waypoints;  // scripted expert route, goal last

    // dense_chain
    double chain_bound = 10.0;
    double chain_dt = 0.1;
    double chain_max_speed = 1.5;

    int obs_dim() const { return 2; }
    int act_dim() const { return id == EnvId::point_maze ? 2 : 1; }
};

/// Built-in environments by name; throws UsageError for unknown ids.
EnvSpec make_env(const std::string& name);
std::vector<std::string> env_names();

struct StepResult {
    Vector next_state;
    double reward = 0.0;
    bool terminal = false;
};

/// Ground-truth dynamics.
///
/// point_maze: position += step_size * action, with the motion resolved one
/// axis at a time and stopped just short of any wall it would cross; reward
/// -1 per step and 0 on the step that enters the goal disc, which terminates.
/// dense_chain: velocity += dt * action (clamped to max speed), position +=
/// dt * velocity; reward is the velocity clipped to [-1, 1]; leaving
/// |position| <= bound terminates.
StepResult env_step(const EnvSpec& spec, const Vector& state, const Vector& action);

/// Ground-truth termination rule applied to a (possibly imagined) state.
class TerminationFn {
public:
    TerminationFn() = default;
    explicit TerminationFn(const EnvSpec& spec);

    bool operator()(const Eigen::Ref<const Vector>& state) const;

private:
    EnvId id_ = EnvId::point_maze;
    Vector goal_;
    double radius_ = 0.0;
    double bound_ = 0.0;
    bool never_ = true;
};

Vector reset(const EnvSpec& spec, Rng& rng);

}  // namespace leq::env

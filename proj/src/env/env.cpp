#include "leq/env/env.hpp"

#include <algorithm>
#include <cmath>

#include "leq/errors.hpp"

namespace leq::env {

namespace {

constexpr double kWallGap = 0.01;

Vector vec2(double x, double y)
{
    Vector v(2);
    v << x, y;
    return v;
}

void add_box(std::vector<Wall>& walls, double w, double h)
{
    walls.push_back({0, 0, w, 0});
    walls.push_back({w, 0, w, h});
    walls.push_back({0, h, w, h});
    walls.push_back({0, 0, 0, h});
}

EnvSpec maze_base(std::string name, double w, double h)
{
    EnvSpec s;
    s.id = EnvId::point_maze;
    s.name = std::move(name);
    s.horizon = 200;
    s.width = w;
    s.height = h;
    add_box(s.walls, w, h);
    return s;
}

// Moves along one axis from `from` by `delta`, stopping short of walls perpendicular to it.
double slide(double from, double delta, double other, const std::vector<Wall>& walls, bool along_x)
{
    double to = from + delta;
    for (const auto& w : walls) {
        const bool vertical = w.x0 == w.x1;
        if (vertical != along_x) continue;  // only walls perpendicular to the motion block it
        const double c = along_x ? w.x0 : w.y0;
        const double lo = along_x ? std::min(w.y0, w.y1) : std::min(w.x0, w.x1);
        const double hi = along_x ? std::max(w.y0, w.y1) : std::max(w.x0, w.x1);
        if (other < lo || other > hi) continue;
        if (delta > 0.0 && from < c && to > c - kWallGap) to = std::max(from, c - kWallGap);
        if (delta < 0.0 && from > c && to < c + kWallGap) to = std::min(from, c + kWallGap);
    }
    return to;
}

}  // namespace

std::vector<std::string> env_names()
{
    return {"point_maze_u", "point_maze_s_corridor", "point_maze_large_spiral", "dense_chain"};
}

EnvSpec make_env(const std::string& name)
{
    if (name == "point_maze_u") {
        // Start bottom-left, goal top-left, divider open on the right.
        EnvSpec s = maze_base(name, 6.0, 6.0);
        s.walls.push_back({0, 3, 4, 3});
        s.start = vec2(1, 1);
        s.goal = vec2(1, 5);
        s.waypoints = {vec2(5, 1.5), vec2(5, 4.5), s.goal};
        return s;
    }
    if (name == "point_maze_s_corridor") {
        EnvSpec s = maze_base(name, 8.0, 6.0);
        s.walls.push_back({0, 2, 6, 2});
        s.walls.push_back({2, 4, 8, 4});
        s.start = vec2(1, 1);
        s.goal = vec2(7, 5);
        s.waypoints = {vec2(7, 1), vec2(7, 3), vec2(1, 3), vec2(1, 5), s.goal};
        return s;
    }
    if (name == "point_maze_large_spiral") {
        // Outer ring around an inner room; the only entrance is on the bottom edge,
        // just past a blocker next to the start, so the route loops the whole ring.
        EnvSpec s = maze_base(name, 10.0, 10.0);
        s.walls.push_back({2, 2, 3, 2});
        s.walls.push_back({4.5, 2, 8, 2});
        s.walls.push_back({8, 2, 8, 8});
        s.walls.push_back({2, 8, 8, 8});
        s.walls.push_back({2, 2, 2, 8});
        s.walls.push_back({3, 0, 3, 2});
        s.start = vec2(1, 1);
        s.goal = vec2(5, 5);
        s.waypoints = {vec2(1, 9), vec2(9, 9), vec2(9, 1), vec2(3.75, 1), vec2(3.75, 3), s.goal};
        return s;
    }
    if (name == "dense_chain") {
        EnvSpec s;
        s.id = EnvId::dense_chain;
        s.name = name;
        s.horizon = 100;
        s.start = vec2(0, 0);
        s.start_noise = 0.5;
        return s;
    }
    throw UsageError("unknown env id '" + name + "'");
}

StepResult env_step(const EnvSpec& spec, const Vector& state, const Vector& action)
{
    if (state.size() != spec.obs_dim() || action.size() != spec.act_dim()) {
        throw DimensionMismatch("env_step: state/action dimension mismatch");
    }
    if (!state.allFinite() || !action.allFinite()) throw PreconditionError("env_step: non-finite state or action");
    if (action.cwiseAbs().maxCoeff() > 1.0 + 1e-9) throw PreconditionError("env_step: action outside [-1, 1]");

    StepResult out;
    if (spec.id == EnvId::point_maze) {
        const double x = slide(state[0], spec.step_size * action[0], state[1], spec.walls, true);
        const double y = slide(state[1], spec.step_size * action[1], x, spec.walls, false);
        out.next_state = vec2(x, y);
        out.terminal = (out.next_state - spec.goal).norm() <= spec.goal_radius;
        out.reward = out.terminal ? 0.0 : -1.0;
        return out;
    }
    const double vel = std::clamp(state[1] + spec.chain_dt * action[0], -spec.chain_max_speed, spec.chain_max_speed);
    const double pos = state[0] + spec.chain_dt * vel;
    out.next_state = vec2(pos, vel);
    out.reward = std::clamp(vel, -1.0, 1.0);
    out.terminal = std::abs(pos) > spec.chain_bound;
    return out;
}

TerminationFn::TerminationFn(const EnvSpec& spec)
    : id_(spec.id), goal_(spec.goal), radius_(spec.goal_radius), bound_(spec.chain_bound), never_(false)
{
}

bool TerminationFn::operator()(const Eigen::Ref<const Vector>& state) const
{
    if (never_) return false;
    if (id_ == EnvId::point_maze) return (state - goal_).norm() <= radius_;
    return std::abs(state[0]) > bound_;
}

Vector reset(const EnvSpec& spec, Rng& rng)
{
    Vector s = spec.start;
    if (spec.id == EnvId::point_maze) {
        for (Eigen::Index i = 0; i < s.size(); ++i) s[i] += rng.uniform(-spec.start_noise, spec.start_noise);
    } else {
        s[0] += rng.uniform(-spec.start_noise, spec.start_noise);
    }
    return s;
}

}  // namespace leq::env

#include "leq/agent/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "leq/agent/returns.hpp"
#include "leq/errors.hpp"
#include "leq/expectile.hpp"

namespace leq::agent {

namespace {

struct Cell {
    int t;
    Eigen::Index n;
};

std::vector<Cell> alive_cells(const ImaginedBatch& b)
{
    std::vector<Cell> cells;
    for (int t = 0; t < b.horizon; ++t) {
        for (Eigen::Index n = 0; n < b.size(); ++n) {
            if (t < b.length[static_cast<std::size_t>(n)]) cells.push_back({t, n});
        }
    }
    return cells;
}

Matrix gather(const std::vector<Matrix>& per_step, const std::vector<Cell>& cells)
{
    Matrix out(per_step.front().rows(), static_cast<Eigen::Index>(cells.size()));
    for (std::size_t i = 0; i < cells.size(); ++i) {
        out.col(static_cast<Eigen::Index>(i)) = per_step[static_cast<std::size_t>(cells[i].t)].col(cells[i].n);
    }
    return out;
}

// Memoized linear forms, keyed by (length, terminal).
class CoefficientCache {
public:
    CoefficientCache(double lambda, double gamma, CriticTarget mode) : lambda_(lambda), gamma_(gamma), mode_(mode) {}

    const ReturnCoefficients& get(int length, bool terminal)
    {
        const auto key = std::pair{length, terminal};
        auto it = cache_.find(key);
        if (it == cache_.end()) {
            it = cache_.emplace(key, return_coefficients(length, terminal, lambda_, gamma_, mode_)).first;
        }
        return it->second;
    }

private:
    double lambda_, gamma_;
    CriticTarget mode_;
    std::map<std::pair<int, bool>, ReturnCoefficients> cache_;
};

void check_finite(double loss, const char* what)
{
    if (!std::isfinite(loss)) throw TrainingDivergence(std::string(what) + ": non-finite loss");
}

}  // namespace

Matrix targets_from_values(const ImaginedBatch& batch, const Matrix& values, double lambda, double gamma,
                           CriticTarget mode)
{
    CoefficientCache cache(lambda, gamma, mode);
    Matrix targets = Matrix::Zero(batch.horizon, batch.size());
    for (Eigen::Index n = 0; n < batch.size(); ++n) {
        const int L = batch.length[static_cast<std::size_t>(n)];
        if (L == 0) continue;
        const auto& c = cache.get(L, batch.terminal[static_cast<std::size_t>(n)]);
        targets.col(n).head(L) =
            c.reward * batch.rewards.col(n).head(L) + c.value * values.col(n).head(L + 1);
    }
    return targets;
}

RolloutTargets rollout_targets(const ImaginedBatch& batch, const Critic& critic, const Policy& policy,
                               double lambda, double gamma, CriticTarget mode)
{
    RolloutTargets out;
    const auto H = batch.horizon;
    out.values.resize(H + 1, batch.size());
    out.q_taken.resize(H, batch.size());
    for (int t = 0; t <= H; ++t) {
        const auto k = static_cast<std::size_t>(t);
        const auto& s = batch.states[k];
        if (t == H) {
            out.values.row(t) = critic.q(s, policy.act(s)).transpose();
            break;
        }
        out.values.row(t) = critic.q(s, batch.policy_actions[k]).transpose();
        if (batch.actions[k] == batch.policy_actions[k]) {
            out.q_taken.row(t) = out.values.row(t);
        } else {
            out.q_taken.row(t) = critic.q(s, batch.actions[k]).transpose();
        }
    }
    for (Eigen::Index n = 0; n < batch.size(); ++n) {
        const int L = batch.length[static_cast<std::size_t>(n)];
        for (int t = L; t < H; ++t) out.q_taken(t, n) = 0.0;
        for (int t = L + 1; t <= H; ++t) out.values(t, n) = 0.0;
    }
    out.targets = targets_from_values(batch, out.values, lambda, gamma, mode);
    return out;
}

double critic_loss_model(const ImaginedBatch& batch, const Matrix& targets, const Critic& critic, double tau,
                         Vector* grad)
{
    const ExpectileParam param(tau);
    const auto cells = alive_cells(batch);
    if (cells.empty()) return 0.0;
    const Matrix s = gather(batch.states, cells);
    const Matrix a = gather(batch.policy_actions, cells);
    Critic::Tape tape;
    const Vector q = critic.q(s, a, tape);
    const double inv = 1.0 / static_cast<double>(cells.size());
    double loss = 0.0;
    Vector g(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        const double u = q[i] - targets(cells[static_cast<std::size_t>(i)].t, cells[static_cast<std::size_t>(i)].n);
        loss += expectile_loss(u, param) * inv;
        g[i] = expectile_loss_grad(u, param) * inv;
    }
    check_finite(loss, "critic_loss_model");
    if (grad) critic.backward(tape, g, grad);
    return loss;
}

double critic_loss_env(const env::TransitionBatch& batch, const Critic& critic, const Policy& policy, double gamma,
                       Vector* grad)
{
    const auto n = batch.states.cols();
    if (n == 0) throw PreconditionError("critic_loss_env: empty batch");
    const Vector next_q = critic.q(batch.next_states, policy.act(batch.next_states));
    const Vector y = batch.rewards.array() + gamma * (1.0 - batch.terminals.array()) * next_q.array();
    Critic::Tape tape;
    const Vector diff = critic.q(batch.states, batch.actions, tape) - y;
    const double loss = 0.5 * diff.squaredNorm() / static_cast<double>(n);
    check_finite(loss, "critic_loss_env");
    if (grad) critic.backward(tape, diff / static_cast<double>(n), grad);
    return loss;
}

double critic_loss_ema(const Matrix& states, const Matrix& actions, const Critic& critic, const Vector& shadow,
                       Vector* grad)
{
    const auto n = states.cols();
    if (n == 0) throw PreconditionError("critic_loss_ema: empty batch");
    const Vector target = critic.q_with(shadow, states, actions);
    Critic::Tape tape;
    const Vector diff = critic.q(states, actions, tape) - target;
    const double loss = diff.squaredNorm() / static_cast<double>(n);
    check_finite(loss, "critic_loss_ema");
    if (grad) critic.backward(tape, 2.0 * diff / static_cast<double>(n), grad);
    return loss;
}

CriticLosses critic_loss_total(const ImaginedBatch& model_batch, const Matrix& targets,
                               const env::TransitionBatch& env_batch, const Critic& critic, const Policy& policy,
                               const Vector& shadow, const AgentConfig& config, Vector* grad)
{
    CriticLosses l;
    const auto size = critic.params().size();
    Vector gm = Vector::Zero(size), ge = Vector::Zero(size), gx = Vector::Zero(size);
    l.model = critic_loss_model(model_batch, targets, critic, config.effective_tau(), grad ? &gm : nullptr);
    l.env = critic_loss_env(env_batch, critic, policy, config.gamma, grad ? &ge : nullptr);
    l.ema = critic_loss_ema(env_batch.states, env_batch.actions, critic, shadow, grad ? &gx : nullptr);
    l.total = config.beta * l.model + (1.0 - config.beta) * l.env + config.omega_ema * l.ema;
    if (grad) *grad += config.beta * gm + (1.0 - config.beta) * ge + config.omega_ema * gx;
    return l;
}

SurrogateResult policy_loss_surrogate(const EnsembleWorldModel& model, const ImaginedBatch& batch,
                                      const Critic& critic, const Policy& policy, double tau, double lambda,
                                      double gamma, Vector* grad, const Matrix* frozen_weights)
{
    const ExpectileParam param(tau);
    const int H = batch.horizon;
    const Eigen::Index N = batch.size();
    const auto steps = static_cast<std::size_t>(H) + 1;

    // Forward replay.
    std::vector<Matrix> states(steps);
    std::vector<Policy::Tape> ptapes(steps);
    std::vector<Critic::Tape> ctapes(steps);
    std::vector<model::StepTapes> mtapes(static_cast<std::size_t>(H));
    Matrix values(H + 1, N);
    Matrix rewards = Matrix::Zero(H, N);
    states[0] = batch.states[0];
    for (int t = 0; t <= H; ++t) {
        const auto k = static_cast<std::size_t>(t);
        const Matrix a = policy.act(states[k], ptapes[k]);
        values.row(t) = critic.q(states[k], a, ctapes[k]).transpose();
        if (t == H) break;
        auto [next, r] = model::replay_batch_step(model, batch, t, states[k], a, &mtapes[k]);
        states[k + 1] = std::move(next);
        rewards.row(t) = r.transpose();
    }

    SurrogateResult res;
    res.weights = Matrix::Zero(H, N);
    res.targets = Matrix::Zero(H, N);
    res.count = batch.total_steps();
    res.values = values;
    for (Eigen::Index n = 0; n < N; ++n) {
        const int L = batch.length[static_cast<std::size_t>(n)];
        res.values.col(n).tail(H - L).setZero();
    }
    if (res.count == 0) {
        return res;
    }
    CoefficientCache cache(lambda, gamma, CriticTarget::lambda);
    Matrix g_r = Matrix::Zero(H, N);
    Matrix g_v = Matrix::Zero(H + 1, N);
    const double inv = 1.0 / static_cast<double>(res.count);
    for (Eigen::Index n = 0; n < N; ++n) {
        const int L = batch.length[static_cast<std::size_t>(n)];
        if (L == 0) continue;
        const auto& c = cache.get(L, batch.terminal[static_cast<std::size_t>(n)]);
        Vector v = values.col(n).head(L + 1);
        const Vector q = c.reward * rewards.col(n).head(L) + c.value * v;
        res.targets.col(n).head(L) = q;
        Vector w(L);
        for (int t = 0; t < L; ++t) {
            // Rollout actions are pi(s_t), so Q(s_t, a_t) is the bootstrap value at t.
            w[t] = frozen_weights ? (*frozen_weights)(t, n) : expectile_weight(values(t, n) - q[t], param);
        }
        res.weights.col(n).head(L) = w;
        res.loss -= inv * w.dot(q);
        const Vector cot = -inv * w;
        g_r.col(n).head(L) = c.reward.transpose() * cot;
        g_v.col(n).head(L + 1) = c.value.transpose() * cot;
    }
    if (!std::isfinite(res.loss)) throw TrainingDivergence("policy_loss_surrogate: non-finite loss");
    if (!grad) return res;

    // Reverse pass through critic bootstraps, policy and model steps.
    Vector g_theta = Vector::Zero(policy.params().size());
    Matrix g_state;
    for (int t = H; t >= 0; --t) {
        const auto k = static_cast<std::size_t>(t);
        Matrix g_s, g_a;
        if (t < H) {
            std::tie(g_s, g_a) =
                model::backward_batch_step(model, batch, t, mtapes[k], g_state, g_r.row(t).transpose());
        } else {
            g_s = Matrix::Zero(states[k].rows(), N);
            g_a = Matrix::Zero(policy.act_dim(), N);
        }
        const auto [gs_c, ga_c] = critic.backward(ctapes[k], g_v.row(t).transpose(), nullptr);
        g_a += ga_c;
        g_s += gs_c;
        g_s += policy.backward(ptapes[k], g_a, &g_theta);
        g_state = std::move(g_s);
    }
    if (!g_theta.allFinite()) throw TrainingDivergence("policy_loss_surrogate: non-finite gradient");
    *grad += g_theta;
    return res;
}

double policy_loss_q_value(const ImaginedBatch& batch, const Critic& critic, const Policy& policy, Vector* grad)
{
    const auto cells = alive_cells(batch);
    if (cells.empty()) return 0.0;
    const Matrix s = gather(batch.states, cells);
    Policy::Tape pt;
    Critic::Tape ct;
    const Vector q = critic.q(s, policy.act(s, pt), ct);
    const double inv = 1.0 / static_cast<double>(cells.size());
    const double loss = -q.sum() * inv;
    check_finite(loss, "policy_loss_q_value");
    if (grad) {
        const auto [gs, ga] = critic.backward(ct, Vector::Constant(q.size(), -inv), nullptr);
        policy.backward(pt, ga, grad);
    }
    return loss;
}

double awr_policy_loss(const ImaginedBatch& batch, const Matrix& targets, const Critic& critic,
                       const Policy& policy, double alpha, Vector* grad)
{
    const auto cells = alive_cells(batch);
    if (cells.empty()) return 0.0;
    const Matrix s = gather(batch.states, cells);
    const Matrix a_roll = gather(batch.actions, cells);
    Policy::Tape pt;
    const Matrix a = policy.act(s, pt);
    const Vector q = critic.q(s, a);
    const double inv = 1.0 / static_cast<double>(cells.size());
    double loss = 0.0;
    Matrix g(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.cols(); ++i) {
        const auto& c = cells[static_cast<std::size_t>(i)];
        const double adv = targets(c.t, c.n) - q[i];
        const double w = std::min(std::exp(adv / alpha), kAwrMaxWeight);
        const Vector diff = a.col(i) - a_roll.col(i);
        loss += inv * w * diff.squaredNorm();
        g.col(i) = 2.0 * inv * w * diff;
    }
    check_finite(loss, "awr_policy_loss");
    if (grad) policy.backward(pt, g, grad);
    return loss;
}

double mobile_lcb_target(const std::vector<double>& rewards, const std::vector<double>& next_q, double gamma,
                         double c)
{
    if (rewards.size() != next_q.size()) throw DimensionMismatch("mobile_lcb_target: size mismatch");
    if (rewards.size() < 2) throw PreconditionError("mobile_lcb_target: need at least two samples");
    const auto m = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i) mean += (rewards[i] + gamma * next_q[i]) / m;
    double var = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        const double d = rewards[i] + gamma * next_q[i] - mean;
        var += d * d / m;
    }
    return mean - c * std::sqrt(var);
}

Matrix mobile_lcb_targets(const EnsembleWorldModel& model, const ImaginedBatch& batch, const Critic& critic,
                          const Policy& policy, double gamma, double c, const env::TerminationFn& termination)
{
    const auto cells = alive_cells(batch);
    Matrix out = Matrix::Zero(batch.horizon, batch.size());
    if (cells.empty()) return out;
    const Matrix s = gather(batch.states, cells);
    const Matrix a = gather(batch.actions, cells);
    const Matrix e = gather(batch.eps, cells);
    const int S = model.obs_dim();
    const auto k = static_cast<Eigen::Index>(cells.size());
    std::vector<std::vector<double>> rewards(cells.size()), next_q(cells.size());
    for (int m : model.elites()) {
        const auto o = model.member(m).forward(s, a);
        const Matrix draw = o.mean + (o.log_std.array().exp() * e.array()).matrix();
        const Matrix next = s + draw.topRows(S);
        const Vector q = critic.q(next, policy.act(next));
        for (Eigen::Index i = 0; i < k; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            rewards[ui].push_back(draw(S, i));
            next_q[ui].push_back(termination(next.col(i)) ? 0.0 : q[i]);
        }
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        out(cells[i].t, cells[i].n) = mobile_lcb_target(rewards[i], next_q[i], gamma, c);
    }
    return out;
}

}  // namespace leq::agent

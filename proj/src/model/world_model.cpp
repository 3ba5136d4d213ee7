#include "leq/model/world_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "leq/errors.hpp"
#include "leq/nn/optim.hpp"

namespace leq::model {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Smooth clamp into [kLogStdMin, kLogStdMax]; keeps a gradient everywhere. The
// final hard clamp only trims softplus overshoot of order 1e-5 at the ends.
double soft_clamp(double x)
{
    const double y = kLogStdMin + softplus(kLogStdMax - softplus(kLogStdMax - x) - kLogStdMin);
    return std::clamp(y, kLogStdMin, kLogStdMax);
}

double soft_clamp_grad(double x)
{
    const double upper = kLogStdMax - softplus(kLogStdMax - x);
    return sigmoid(upper - kLogStdMin) * sigmoid(kLogStdMax - x);
}

Matrix targets_of(const env::TransitionBatch& b)
{
    Matrix t(b.states.rows() + 1, b.states.cols());
    t.topRows(b.states.rows()) = b.next_states - b.states;
    t.bottomRows(1) = b.rewards.transpose();
    return t;
}

env::TransitionBatch whole(const env::TransitionTable& table)
{
    return {table.states, table.actions, table.next_states, table.rewards, table.terminals};
}

// Per-row standard deviation; degenerate rows get 1.
Vector spread(const Matrix& x, const Vector& mu)
{
    Vector sd = ((x.colwise() - mu).array().square().rowwise().mean()).sqrt();
    for (Eigen::Index i = 0; i < sd.size(); ++i) {
        if (!(sd[i] > 1e-8)) sd[i] = 1.0;
    }
    return sd;
}

double quiet_nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

double clamp_log_std(double raw) { return soft_clamp(raw); }

DynamicsNet::DynamicsNet(int obs_dim, int act_dim, const std::vector<int>& hidden, std::uint64_t init_seed,
                         nn::Activation activation)
    : obs_dim_(obs_dim), act_dim_(act_dim)
{
    nn::MlpSpec spec;
    spec.input_dim = obs_dim + act_dim;
    spec.hidden_dims = hidden;
    spec.output_dim = 2 * (obs_dim + 1);
    spec.use_layernorm = false;
    spec.use_symlog_input = false;
    spec.activation = activation;
    net_ = nn::Mlp(spec, init_seed);
    in_mean_ = Vector::Zero(spec.input_dim);
    in_std_ = Vector::Ones(spec.input_dim);
    out_mean_ = Vector::Zero(obs_dim + 1);
    out_std_ = Vector::Ones(obs_dim + 1);
}

void DynamicsNet::set_normalizer(Vector mean, Vector std)
{
    if (mean.size() != obs_dim_ + act_dim_ || std.size() != obs_dim_ + act_dim_) {
        throw DimensionMismatch("DynamicsNet::set_normalizer: wrong size");
    }
    in_mean_ = std::move(mean);
    in_std_ = std::move(std);
}

void DynamicsNet::set_target_normalizer(Vector mean, Vector std)
{
    if (mean.size() != head_dim() || std.size() != head_dim()) {
        throw DimensionMismatch("DynamicsNet::set_target_normalizer: wrong size");
    }
    out_mean_ = std::move(mean);
    out_std_ = std::move(std);
}

DynamicsNet::Output DynamicsNet::head(const Matrix& y) const
{
    Output out;
    out.mean = (y.topRows(head_dim()).array().colwise() * out_std_.array()).colwise() + out_mean_.array();
    out.raw_log_std = y.bottomRows(head_dim()).colwise() + out_std_.array().log().matrix();
    out.log_std = out.raw_log_std.unaryExpr(&soft_clamp);
    return out;
}

Matrix DynamicsNet::normalized_input(const Matrix& states, const Matrix& actions) const
{
    if (states.rows() != obs_dim_ || actions.rows() != act_dim_ || states.cols() != actions.cols()) {
        throw DimensionMismatch("DynamicsNet: state/action shape mismatch");
    }
    Matrix x(obs_dim_ + act_dim_, states.cols());
    x.topRows(obs_dim_) = states;
    x.bottomRows(act_dim_) = actions;
    x.colwise() -= in_mean_;
    x.array().colwise() /= in_std_.array();
    return x;
}

DynamicsNet::Output DynamicsNet::forward(const Matrix& states, const Matrix& actions) const
{
    return head(net_.forward(normalized_input(states, actions)));
}

DynamicsNet::Output DynamicsNet::forward(const Matrix& states, const Matrix& actions, Tape& tape) const
{
    tape.out = head(net_.forward(normalized_input(states, actions), tape.mlp));
    return tape.out;
}

std::pair<Matrix, Matrix> DynamicsNet::backward(const Tape& tape, const Matrix& g_mean, const Matrix& g_log_std,
                                                Vector* param_grad) const
{
    Matrix g(2 * head_dim(), g_mean.cols());
    g.topRows(head_dim()) = g_mean.array().colwise() * out_std_.array();
    g.bottomRows(head_dim()) = g_log_std.cwiseProduct(tape.out.raw_log_std.unaryExpr(&soft_clamp_grad));
    Matrix gx = net_.backward(tape.mlp, g, param_grad);
    gx.array().colwise() /= in_std_.array();
    return {gx.topRows(obs_dim_), gx.bottomRows(act_dim_)};
}

double nll_loss(const DynamicsNet& net, const env::TransitionBatch& batch)
{
    if (batch.states.cols() == 0) throw PreconditionError("nll_loss: empty batch");
    const auto out = net.forward(batch.states, batch.actions);
    const Matrix r = targets_of(batch) - out.mean;
    const Matrix inv_var = (-2.0 * out.log_std).array().exp();
    const double total = (0.5 * r.array().square() * inv_var.array() + out.log_std.array() + kHalfLog2Pi).sum();
    const double loss = total / static_cast<double>(batch.states.cols());
    if (!std::isfinite(loss)) throw TrainingDivergence("nll_loss: non-finite loss");
    return loss;
}

double nll_loss_and_grad(const DynamicsNet& net, const env::TransitionBatch& batch, Vector& grad)
{
    if (batch.states.cols() == 0) throw PreconditionError("nll_loss: empty batch");
    DynamicsNet::Tape tape;
    const auto out = net.forward(batch.states, batch.actions, tape);
    const double n = static_cast<double>(batch.states.cols());
    const Matrix r = targets_of(batch) - out.mean;
    const Matrix inv_var = (-2.0 * out.log_std).array().exp();
    const Matrix r2_iv = r.array().square() * inv_var.array();
    const double loss = (0.5 * r2_iv.array() + out.log_std.array() + kHalfLog2Pi).sum() / n;
    if (!std::isfinite(loss)) throw TrainingDivergence("nll_loss: non-finite loss");
    const Matrix g_mean = -(r.array() * inv_var.array()) / n;
    const Matrix g_ls = (1.0 - r2_iv.array()) / n;
    net.backward(tape, g_mean, g_ls, &grad);
    return loss;
}

void to_json(nlohmann::json& j, const EnsembleConfig& c)
{
    j = {{"members", c.members}, {"elites", c.elites},         {"hidden", c.hidden},
         {"activation", nn::to_string(c.activation)},
         {"lr", c.lr},           {"batch_size", c.batch_size}, {"steps", c.steps},
         {"eval_every", c.eval_every}, {"holdout", c.holdout}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EnsembleConfig& c)
{
    c.members = j.at("members").get<int>();
    c.elites = j.at("elites").get<int>();
    c.hidden = j.at("hidden").get<std::vector<int>>();
    if (j.contains("activation")) c.activation = nn::activation_from_string(j.at("activation").get<std::string>());
    c.lr = j.at("lr").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.steps = j.at("steps").get<int>();
    c.eval_every = j.at("eval_every").get<int>();
    c.holdout = j.at("holdout").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
}

std::vector<bool> EnsembleWorldModel::elite_mask() const
{
    std::vector<bool> mask(members_.size(), false);
    for (int e : elites_) mask[static_cast<std::size_t>(e)] = true;
    return mask;
}

int EnsembleWorldModel::sample_elite(Rng& rng) const
{
    if (elites_.empty()) throw PreconditionError("world model has no elites");
    return elites_[rng.below(elites_.size())];
}

void EnsembleWorldModel::add_member(DynamicsNet net, int id, double val_nll)
{
    if (!members_.empty() && (net.obs_dim() != obs_dim() || net.act_dim() != act_dim())) {
        throw DimensionMismatch("ensemble members disagree on dimensions");
    }
    members_.push_back(std::move(net));
    ids_.push_back(id);
    val_nll_.push_back(val_nll);
}

void EnsembleWorldModel::select_elites(int n_elites)
{
    std::vector<int> finite;
    for (int i = 0; i < size(); ++i) {
        if (std::isfinite(val_nll_[static_cast<std::size_t>(i)])) finite.push_back(i);
    }
    if (n_elites < 1 || static_cast<int>(finite.size()) < n_elites) {
        throw TrainingDivergence("world model: only " + std::to_string(finite.size()) + " finite members, need " +
                                 std::to_string(n_elites));
    }
    // Rank by (validation NLL, id) so the choice does not depend on member order.
    std::sort(finite.begin(), finite.end(), [&](int a, int b) {
        const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
        if (val_nll_[ua] != val_nll_[ub]) return val_nll_[ua] < val_nll_[ub];
        return ids_[ua] < ids_[ub];
    });
    elites_.assign(finite.begin(), finite.begin() + n_elites);
    std::sort(elites_.begin(), elites_.end(), [&](int a, int b) {
        return ids_[static_cast<std::size_t>(a)] < ids_[static_cast<std::size_t>(b)];
    });
}

nn::Checkpoint EnsembleWorldModel::checkpoint() const
{
    nn::Checkpoint ckpt;
    ckpt.header["kind"] = "ensemble";
    ckpt.header["obs_dim"] = obs_dim();
    ckpt.header["act_dim"] = act_dim();
    ckpt.header["elites"] = elites_;
    auto members = nlohmann::json::array();
    for (int i = 0; i < size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        const std::string name = "member" + std::to_string(i);
        members.push_back({{"id", ids_[k]}, {"val_nll", val_nll_[k]}, {"name", name}});
        nn::add_network(ckpt, name, members_[k].net());
        ckpt.add(name + "/in_mean", members_[k].input_mean());
        ckpt.add(name + "/in_std", members_[k].input_std());
        ckpt.add(name + "/out_mean", members_[k].target_mean());
        ckpt.add(name + "/out_std", members_[k].target_std());
    }
    ckpt.header["members"] = members;
    return ckpt;
}

EnsembleWorldModel EnsembleWorldModel::from_checkpoint(const nn::Checkpoint& ckpt)
{
    if (ckpt.header.value("kind", "") != "ensemble") throw FormatError("checkpoint is not a world-model ensemble");
    EnsembleWorldModel m;
    const int obs = ckpt.header.at("obs_dim").get<int>();
    const int act = ckpt.header.at("act_dim").get<int>();
    for (const auto& entry : ckpt.header.at("members")) {
        const auto name = entry.at("name").get<std::string>();
        DynamicsNet net;
        auto mlp = nn::get_network(ckpt, name);
        net = DynamicsNet(obs, act, mlp.spec().hidden_dims, 0);
        net.net() = std::move(mlp);
        net.set_normalizer(ckpt.get(name + "/in_mean"), ckpt.get(name + "/in_std"));
        net.set_target_normalizer(ckpt.get(name + "/out_mean"), ckpt.get(name + "/out_std"));
        // Non-finite scores are written as JSON null.
        const auto& v = entry.at("val_nll");
        const double nll = v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
        m.add_member(std::move(net), entry.at("id").get<int>(), nll);
    }
    m.elites_ = ckpt.header.at("elites").get<std::vector<int>>();
    for (int e : m.elites_) {
        if (e < 0 || e >= m.size()) throw FormatError("ensemble checkpoint: elite index out of range");
    }
    return m;
}

EnsembleWorldModel train_ensemble(const env::OfflineDataset& dataset, const EnsembleConfig& config)
{
    if (dataset.num_transitions() < 20) throw PreconditionError("train_ensemble: need at least 20 transitions");
    if (config.members < config.elites || config.elites < 1) {
        throw PreconditionError("train_ensemble: need 1 <= elites <= members");
    }
    const Rng root(config.seed);

    // Per-trajectory split; a single trajectory falls back to a transition split.
    env::OfflineDataset train_ds = dataset, val_ds = dataset;
    train_ds.trajectories.clear();
    val_ds.trajectories.clear();
    std::vector<std::size_t> order(dataset.trajectories.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng = root.fork("split");
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
    if (order.size() >= 2) {
        const auto n_val = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::lround(config.holdout * static_cast<double>(order.size()))), 1,
            order.size() - 1);
        for (std::size_t i = 0; i < order.size(); ++i) {
            (i < n_val ? val_ds : train_ds).trajectories.push_back(dataset.trajectories[order[i]]);
        }
    } else {
        const auto& only = dataset.trajectories.front();
        const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(config.holdout * only.size()));
        train_ds.trajectories.emplace_back(only.begin(), only.end() - static_cast<std::ptrdiff_t>(n_val));
        val_ds.trajectories.emplace_back(only.end() - static_cast<std::ptrdiff_t>(n_val), only.end());
    }
    const auto train = env::flatten(train_ds);
    const auto val = whole(env::flatten(val_ds));

    Matrix inputs(dataset.obs_dim + dataset.act_dim, train.size());
    inputs.topRows(dataset.obs_dim) = train.states;
    inputs.bottomRows(dataset.act_dim) = train.actions;
    const Vector mu = inputs.rowwise().mean();
    const Vector sd = spread(inputs, mu);
    const Matrix targets = targets_of(whole(train));
    const Vector t_mu = targets.rowwise().mean();
    const Vector t_sd = spread(targets, t_mu);

    EnsembleWorldModel model;
    for (int m = 0; m < config.members; ++m) {
        const std::string tag = "member/" + std::to_string(m);
        DynamicsNet net(dataset.obs_dim, dataset.act_dim, config.hidden, mix_seed(config.seed, tag + "/init"),
                        config.activation);
        net.set_normalizer(mu, sd);
        net.set_target_normalizer(t_mu, t_sd);
        Rng batches = root.fork(tag + "/batches");
        nn::Adam adam(net.net().num_params(), config.lr);
        Vector best = net.net().params();
        double best_nll = std::numeric_limits<double>::infinity();
        auto validate = [&] {
            double v = quiet_nan();
            try {
                v = nll_loss(net, val);
            } catch (const TrainingDivergence&) {
            }
            if (std::isfinite(v) && v < best_nll) {
                best_nll = v;
                best = net.net().params();
            }
        };
        bool diverged = false;
        for (int step = 1; step <= config.steps && !diverged; ++step) {
            const auto batch = env::sample_batch(train, config.batch_size, batches);
            Vector grad = Vector::Zero(net.net().num_params());
            try {
                nll_loss_and_grad(net, batch, grad);
            } catch (const TrainingDivergence&) {
                diverged = true;
                break;
            }
            if (!grad.allFinite()) {
                diverged = true;
                break;
            }
            // Linear decay to a tenth of the base rate sharpens the final fit.
            adam.set_lr(config.lr * (1.0 - 0.99 * static_cast<double>(step - 1) / config.steps));
            adam.step(net.net().params(), grad);
            if (step % config.eval_every == 0 || step == config.steps) validate();
        }
        if (diverged) best_nll = std::numeric_limits<double>::infinity();
        net.net().set_params(best);
        model.add_member(std::move(net), m, best_nll);
    }
    model.select_elites(config.elites);
    return model;
}

std::pair<Vector, double> replay_step(const EnsembleWorldModel& model, int member, const Vector& eps,
                                      const Vector& state, const Vector& action)
{
    const auto& net = model.member(member);
    const auto out = net.forward(Matrix(state), Matrix(action));
    const Vector draw = out.mean.col(0) + out.log_std.col(0).array().exp().matrix().cwiseProduct(eps);
    return {state + draw.head(net.obs_dim()), draw[net.obs_dim()]};
}

StepSample sample_step(const EnsembleWorldModel& model, const Vector& state, const Vector& action, Rng& rng)
{
    StepSample s;
    s.member = model.sample_elite(rng);
    s.eps.resize(model.obs_dim() + 1);
    for (Eigen::Index i = 0; i < s.eps.size(); ++i) s.eps[i] = rng.normal();
    std::tie(s.next_state, s.reward) = replay_step(model, s.member, s.eps, state, action);
    return s;
}

int ImaginedBatch::total_steps() const { return std::accumulate(length.begin(), length.end(), 0); }

std::pair<Matrix, Vector> replay_batch_step(const EnsembleWorldModel& model, const ImaginedBatch& batch, int t,
                                            const Matrix& states, const Matrix& actions, StepTapes* tapes)
{
    const int S = model.obs_dim();
    const Eigen::Index N = states.cols();
    Matrix next = states;
    Vector reward = Vector::Zero(N);
    std::vector<std::vector<Eigen::Index>> groups(static_cast<std::size_t>(model.size()));
    for (Eigen::Index n = 0; n < N; ++n) {
        const int m = batch.members(t, n);
        if (m >= 0) groups[static_cast<std::size_t>(m)].push_back(n);
    }
    if (tapes) *tapes = StepTapes{};
    for (int m = 0; m < model.size(); ++m) {
        const auto& cols = groups[static_cast<std::size_t>(m)];
        if (cols.empty()) continue;
        const auto k = static_cast<Eigen::Index>(cols.size());
        Matrix s(S, k), a(actions.rows(), k), e(S + 1, k);
        for (Eigen::Index j = 0; j < k; ++j) {
            s.col(j) = states.col(cols[static_cast<std::size_t>(j)]);
            a.col(j) = actions.col(cols[static_cast<std::size_t>(j)]);
            e.col(j) = batch.eps[static_cast<std::size_t>(t)].col(cols[static_cast<std::size_t>(j)]);
        }
        DynamicsNet::Tape tape;
        const auto out = model.member(m).forward(s, a, tape);
        const Matrix draw = out.mean + (out.log_std.array().exp() * e.array()).matrix();
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto n = cols[static_cast<std::size_t>(j)];
            next.col(n) = s.col(j) + draw.col(j).head(S);
            reward[n] = draw(S, j);
        }
        if (tapes) {
            tapes->members.push_back(m);
            tapes->columns.push_back(cols);
            tapes->tapes.push_back(std::move(tape));
        }
    }
    return {next, reward};
}

std::pair<Matrix, Matrix> backward_batch_step(const EnsembleWorldModel& model, const ImaginedBatch& batch, int t,
                                              const StepTapes& tapes, const Matrix& g_next, const Vector& g_reward)
{
    const int S = model.obs_dim();
    Matrix g_state = g_next;
    Matrix g_action = Matrix::Zero(model.act_dim(), g_next.cols());
    for (std::size_t i = 0; i < tapes.members.size(); ++i) {
        const auto& cols = tapes.columns[i];
        const auto& tape = tapes.tapes[i];
        const auto k = static_cast<Eigen::Index>(cols.size());
        Matrix g_mean(S + 1, k), e(S + 1, k);
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto n = cols[static_cast<std::size_t>(j)];
            g_mean.col(j).head(S) = g_next.col(n);
            g_mean(S, j) = g_reward[n];
            e.col(j) = batch.eps[static_cast<std::size_t>(t)].col(n);
        }
        const Matrix g_ls = g_mean.array() * tape.out.log_std.array().exp() * e.array();
        const auto [gs, ga] = model.member(tapes.members[i]).backward(tape, g_mean, g_ls, nullptr);
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto n = cols[static_cast<std::size_t>(j)];
            g_state.col(n) += gs.col(j);
            g_action.col(n) += ga.col(j);
        }
    }
    return {g_state, g_action};
}

ImaginedBatch imagine_rollout(const EnsembleWorldModel& model, const PolicyFn& policy, const Matrix& start_states,
                              int horizon, const env::TerminationFn& termination, double action_noise_sigma,
                              Rng& rng)
{
    if (horizon < 1) throw PreconditionError("imagine_rollout: horizon must be >= 1");
    if (start_states.rows() != model.obs_dim()) throw DimensionMismatch("imagine_rollout: start state dimension");
    const Eigen::Index N = start_states.cols();
    const int S = model.obs_dim();
    const int A = model.act_dim();

    ImaginedBatch b;
    b.horizon = horizon;
    b.states.assign(static_cast<std::size_t>(horizon) + 1, Matrix());
    b.states[0] = start_states;
    b.rewards = Matrix::Zero(horizon, N);
    b.members = Eigen::MatrixXi::Constant(horizon, N, -1);
    b.length.assign(static_cast<std::size_t>(N), 0);
    b.terminal.assign(static_cast<std::size_t>(N), false);
    b.truncated.assign(static_cast<std::size_t>(N), false);
    std::vector<bool> alive(static_cast<std::size_t>(N), true);
    for (Eigen::Index n = 0; n < N; ++n) {
        if (termination(start_states.col(n))) {
            alive[static_cast<std::size_t>(n)] = false;
            b.terminal[static_cast<std::size_t>(n)] = true;
        }
    }

    for (int t = 0; t < horizon; ++t) {
        const auto tt = static_cast<std::size_t>(t);
        const Matrix& s = b.states[tt];
        Matrix a_pol = policy(s);
        if (a_pol.rows() != A || a_pol.cols() != N) throw DimensionMismatch("imagine_rollout: policy output shape");
        Matrix a = a_pol;
        Matrix eps = Matrix::Zero(S + 1, N);
        for (Eigen::Index n = 0; n < N; ++n) {
            if (!alive[static_cast<std::size_t>(n)]) continue;
            if (action_noise_sigma > 0.0) {
                for (int i = 0; i < A; ++i) a(i, n) = std::clamp(a(i, n) + rng.normal(0.0, action_noise_sigma), -1.0, 1.0);
            }
            b.members(t, n) = model.sample_elite(rng);
            for (int i = 0; i <= S; ++i) eps(i, n) = rng.normal();
        }
        b.policy_actions.push_back(std::move(a_pol));
        b.actions.push_back(std::move(a));
        b.eps.push_back(std::move(eps));

        auto [next, reward] = replay_batch_step(model, b, t, s, b.actions[tt], nullptr);
        for (Eigen::Index n = 0; n < N; ++n) {
            const auto k = static_cast<std::size_t>(n);
            if (!alive[k]) continue;
            if (!next.col(n).allFinite() || !std::isfinite(reward[n])) {
                // Drop the step: the rollout ends at its last finite state.
                alive[k] = false;
                b.truncated[k] = true;
                b.members(t, n) = -1;
                next.col(n) = s.col(n);
                reward[n] = 0.0;
                continue;
            }
            b.length[k] = t + 1;
            b.rewards(t, n) = reward[n];
            if (termination(next.col(n))) {
                alive[k] = false;
                b.terminal[k] = true;
            }
        }
        b.states[tt + 1] = std::move(next);
    }
    return b;
}

}  // namespace leq::model

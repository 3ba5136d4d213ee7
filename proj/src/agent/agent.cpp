#include "leq/agent/agent.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "leq/errors.hpp"

namespace leq::agent {

namespace {

Matrix sample_columns(const Matrix& m, Eigen::Index count, int n, Rng& rng)
{
    Matrix out(m.rows(), n);
    for (int i = 0; i < n; ++i) out.col(i) = m.col(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(count))));
    return out;
}

void require_finite(const Vector& g, const char* what)
{
    if (!g.allFinite()) throw TrainingDivergence(std::string(what) + ": non-finite gradient");
}

}  // namespace

ModelStateBuffer::ModelStateBuffer(int obs_dim, Eigen::Index capacity) : data_(obs_dim, capacity)
{
    if (capacity < 1) throw PreconditionError("ModelStateBuffer: capacity must be >= 1");
}

void ModelStateBuffer::insert(const Eigen::Ref<const Vector>& state)
{
    if (state.size() != data_.rows()) throw DimensionMismatch("ModelStateBuffer: state dimension");
    data_.col(cursor_) = state;
    cursor_ = (cursor_ + 1) % capacity();
    size_ = std::min(size_ + 1, capacity());
}

Matrix ModelStateBuffer::sample(int n, Rng& rng) const
{
    if (size_ == 0) throw PreconditionError("ModelStateBuffer: empty");
    return sample_columns(data_, size_, n, rng);
}

void ModelStateBuffer::restore(Matrix data, Eigen::Index size, Eigen::Index cursor)
{
    if (size < 0 || size > data.cols() || cursor < 0 || (data.cols() > 0 && cursor >= data.cols())) {
        throw FormatError("ModelStateBuffer: inconsistent restore");
    }
    data_ = std::move(data);
    size_ = size;
    cursor_ = cursor;
}

double pretrain_bc(const env::TransitionTable& data, Policy& policy, int steps, int batch_size, double lr, Rng& rng)
{
    if (data.size() == 0) throw PreconditionError("pretrain_bc: empty dataset");
    nn::Adam opt(policy.params().size(), lr);
    for (int i = 0; i < steps; ++i) {
        const auto b = env::sample_batch(data, batch_size, rng);
        Policy::Tape tape;
        const Matrix diff = policy.act(b.states, tape) - b.actions;
        Vector g = Vector::Zero(policy.params().size());
        policy.backward(tape, 2.0 * diff / static_cast<double>(batch_size), &g);
        require_finite(g, "pretrain_bc");
        opt.step(policy.params(), g);
    }
    const Matrix diff = policy.act(data.states) - data.actions;
    return diff.squaredNorm() / static_cast<double>(data.size());
}

double pretrain_fqe(const env::TransitionTable& data, const Policy& policy, Critic& critic, int steps,
                    int batch_size, double lr, double gamma, Rng& rng)
{
    if (data.size() == 0) throw PreconditionError("pretrain_fqe: empty dataset");
    nn::Adam opt(critic.params().size(), lr);
    for (int i = 0; i < steps; ++i) {
        const auto b = env::sample_batch(data, batch_size, rng);
        Vector g = Vector::Zero(critic.params().size());
        critic_loss_env(b, critic, policy, gamma, &g);
        require_finite(g, "pretrain_fqe");
        // Linear decay to a hundredth of the base rate settles the fixed point.
        opt.set_lr(lr * (1.0 - 0.99 * static_cast<double>(i) / steps));
        opt.step(critic.params(), g);
    }
    const env::TransitionBatch all{data.states, data.actions, data.next_states, data.rewards, data.terminals};
    return critic_loss_env(all, critic, policy, gamma, nullptr);
}

void expand_dataset(ModelStateBuffer& buffer, const env::TransitionTable& data, const EnsembleWorldModel& model,
                    const Policy& policy, const AgentConfig& config, const env::TerminationFn& termination,
                    Rng& rng)
{
    if (data.size() == 0) throw PreconditionError("expand_dataset: empty dataset");
    const int chunk = std::max(1, config.batch_model);
    int inserted = 0;
    auto act = [&](const Matrix& s) { return policy.act(s); };
    while (inserted < config.expand_count) {
        const Matrix starts = sample_columns(data.states, data.size(), chunk, rng);
        const auto b = model::imagine_rollout(model, act, starts, config.expand_horizon, termination,
                                              config.sigma_exp, rng);
        // States s_t are inserted before stepping, so t runs over alive steps.
        for (int t = 0; t < config.expand_horizon && inserted < config.expand_count; ++t) {
            for (Eigen::Index n = 0; n < b.size() && inserted < config.expand_count; ++n) {
                if (t < b.length[static_cast<std::size_t>(n)]) {
                    buffer.insert(b.states[static_cast<std::size_t>(t)].col(n));
                    ++inserted;
                }
            }
        }
        if (b.total_steps() == 0) break;  // every start is terminal
    }
}

std::string metrics_header()
{
    return "step,critic_total,critic_model,critic_env,critic_ema,actor_loss,mean_q,mean_target,mean_length,"
           "buffer_size,eval_return,success_rate";
}

std::string metrics_row(const TrainMetrics& m, double eval_return, double success_rate)
{
    std::ostringstream os;
    os << std::setprecision(17);
    os << m.step << ',' << m.critic.total << ',' << m.critic.model << ',' << m.critic.env << ',' << m.critic.ema << ','
       << m.actor_loss << ',' << m.mean_q << ',' << m.mean_target << ',' << m.mean_length << ',' << m.buffer_size
       << ',';
    if (std::isnan(eval_return)) {
        os << ',';
    } else {
        os << eval_return << ',' << success_rate;
    }
    return os.str();
}

EvalResult evaluate_policy(const ActionFn& policy, const env::EnvSpec& spec, int n_episodes, std::uint64_t seed)
{
    if (n_episodes < 1) throw PreconditionError("evaluate_policy: n_episodes must be >= 1");
    const Rng root(seed);
    const auto N = static_cast<Eigen::Index>(n_episodes);
    Matrix states(spec.obs_dim(), N);
    for (int i = 0; i < n_episodes; ++i) {
        Rng r = root.fork("episode/" + std::to_string(i));
        states.col(i) = env::reset(spec, r);
    }
    std::vector<bool> alive(static_cast<std::size_t>(N), true);
    std::vector<bool> success(static_cast<std::size_t>(N), false);
    EvalResult res;
    res.returns.assign(static_cast<std::size_t>(N), 0.0);
    for (int t = 0; t < spec.horizon; ++t) {
        const Matrix actions = policy(states).cwiseMax(-1.0).cwiseMin(1.0);
        bool any = false;
        for (Eigen::Index n = 0; n < N; ++n) {
            const auto k = static_cast<std::size_t>(n);
            if (!alive[k]) continue;
            const auto step = env::env_step(spec, states.col(n), actions.col(n));
            res.returns[k] += step.reward;
            states.col(n) = step.next_state;
            if (step.terminal) {
                alive[k] = false;
                success[k] = spec.id == env::EnvId::point_maze;
            }
            any = any || alive[k];
        }
        if (!any) break;
    }
    for (Eigen::Index n = 0; n < N; ++n) {
        res.mean_return += res.returns[static_cast<std::size_t>(n)] / static_cast<double>(N);
        res.success_rate += success[static_cast<std::size_t>(n)] ? 1.0 / static_cast<double>(N) : 0.0;
    }
    return res;
}

LeqAgent::LeqAgent(AgentConfig config, const env::OfflineDataset& dataset, const env::EnvSpec& spec,
                   std::uint64_t seed)
    : config_(std::move(config)),
      spec_(spec),
      termination_(spec),
      data_(env::flatten(dataset)),
      rng_(mix_seed(seed, "agent/train"))
{
    config_.validate();
    if (data_.size() == 0) throw PreconditionError("LeqAgent: empty dataset");
    if (dataset.obs_dim != spec.obs_dim() || dataset.act_dim != spec.act_dim()) {
        throw DimensionMismatch("LeqAgent: dataset does not match the environment");
    }
    policy_ = Policy(spec.obs_dim(), spec.act_dim(), config_.hidden, mix_seed(seed, "agent/policy_init"));
    critic_ = Critic(spec.obs_dim(), spec.act_dim(), config_.hidden, mix_seed(seed, "agent/critic_init"));
    actor_opt_ = nn::Adam(policy_.params().size(), config_.lr_actor);
    critic_opt_ = nn::Adam(critic_.params().size(), config_.lr_critic);
    ema_ = nn::EmaTracker(critic_.params(), config_.ema_decay);
    buffer_ = ModelStateBuffer(spec.obs_dim(), 10 * static_cast<Eigen::Index>(config_.expand_count));
}

void LeqAgent::pretrain()
{
    if (!config_.pretrain) return;
    Rng bc_rng = rng_.fork("pretrain/bc");
    Rng fqe_rng = rng_.fork("pretrain/fqe");
    bc_mse_ = pretrain_bc(data_, policy_, config_.bc_steps, config_.batch_env, config_.lr_pretrain, bc_rng);
    fqe_loss_ = pretrain_fqe(data_, policy_, critic_, config_.fqe_steps, config_.batch_env, config_.lr_pretrain,
                             config_.gamma, fqe_rng);
    ema_.reset(critic_.params());
}

ActionFn LeqAgent::action_fn() const
{
    return [this](const Matrix& s) { return policy_.act(s); };
}

TrainMetrics LeqAgent::train_step(const EnsembleWorldModel& model)
{
    if (model.obs_dim() != spec_.obs_dim() || model.act_dim() != spec_.act_dim()) {
        throw DimensionMismatch("train_step: world model does not match the environment");
    }
    if (config_.use_expansion && step_ % config_.expand_every == 0) {
        expand_dataset(buffer_, data_, model, policy_, config_, termination_, rng_);
    }
    const auto env_batch = env::sample_batch(data_, config_.batch_env, rng_);

    Matrix starts(spec_.obs_dim(), config_.batch_model);
    const int from_buffer = (config_.use_expansion && buffer_.size() > 0) ? config_.batch_model / 2 : 0;
    if (from_buffer > 0) starts.leftCols(from_buffer) = buffer_.sample(from_buffer, rng_);
    starts.rightCols(config_.batch_model - from_buffer) =
        sample_columns(data_.states, data_.size(), config_.batch_model - from_buffer, rng_);

    const double noise = config_.policy_update == PolicyUpdate::awr ? config_.sigma_exp : 0.0;
    const auto batch = model::imagine_rollout(model, action_fn(), starts, config_.horizon, termination_, noise, rng_);

    // The surrogate replay already evaluates the lambda targets; reuse them when they coincide.
    TrainMetrics m;
    Vector g_actor = Vector::Zero(policy_.params().size());
    Matrix values, targets;
    const bool fused = config_.policy_update == PolicyUpdate::lambda_expectile &&
                       config_.critic_target == CriticTarget::lambda &&
                       config_.conservatism != Conservatism::mobile_lcb;
    if (fused) {
        auto sur = policy_loss_surrogate(model, batch, critic_, policy_, config_.effective_tau(), config_.lambda,
                                         config_.gamma, &g_actor);
        m.actor_loss = sur.loss;
        values = std::move(sur.values);
        targets = std::move(sur.targets);
    } else {
        auto rt = rollout_targets(batch, critic_, policy_, config_.lambda, config_.gamma, config_.critic_target);
        values = std::move(rt.values);
        targets = std::move(rt.targets);
        if (config_.conservatism == Conservatism::mobile_lcb) {
            targets = mobile_lcb_targets(model, batch, critic_, policy_, config_.gamma, config_.lcb_coef, termination_);
        }
        switch (config_.policy_update) {
        case PolicyUpdate::lambda_expectile:
            m.actor_loss = policy_loss_surrogate(model, batch, critic_, policy_, config_.effective_tau(),
                                                 config_.lambda, config_.gamma, &g_actor)
                               .loss;
            break;
        case PolicyUpdate::q_value: m.actor_loss = policy_loss_q_value(batch, critic_, policy_, &g_actor); break;
        case PolicyUpdate::awr:
            m.actor_loss = awr_policy_loss(batch, targets, critic_, policy_, config_.awr_alpha, &g_actor);
            break;
        }
    }

    Vector g_critic = Vector::Zero(critic_.params().size());
    m.critic = critic_loss_total(batch, targets, env_batch, critic_, policy_, ema_.shadow(), config_, &g_critic);
    require_finite(g_critic, "critic update");
    require_finite(g_actor, "actor update");

    critic_opt_.step(critic_.params(), g_critic);
    actor_opt_.step(policy_.params(), g_actor);
    ema_.update(critic_.params());

    const int alive = batch.total_steps();
    m.mean_length = static_cast<double>(alive) / static_cast<double>(batch.size());
    if (alive > 0) {
        for (Eigen::Index n = 0; n < batch.size(); ++n) {
            const int L = batch.length[static_cast<std::size_t>(n)];
            m.mean_q += values.col(n).head(L).sum() / alive;
            m.mean_target += targets.col(n).head(L).sum() / alive;
        }
    }
    if (!std::isfinite(m.critic.total) || !std::isfinite(m.actor_loss) || !std::isfinite(m.mean_q)) {
        throw TrainingDivergence("train_step: non-finite metrics at step " + std::to_string(step_));
    }
    m.step = ++step_;
    m.buffer_size = buffer_.size();
    return m;
}

nn::Checkpoint LeqAgent::checkpoint() const
{
    nn::Checkpoint ckpt;
    ckpt.header["kind"] = "leq_agent";
    ckpt.header["config"] = config_;
    ckpt.header["env"] = spec_.name;
    ckpt.header["step"] = step_;
    ckpt.header["rng"] = rng_.serialize();
    ckpt.header["actor_opt"] = actor_opt_.state_header();
    ckpt.header["critic_opt"] = critic_opt_.state_header();
    ckpt.header["buffer"] = {{"size", buffer_.size()}, {"cursor", buffer_.cursor()}, {"rows", buffer_.storage().rows()},
                             {"capacity", buffer_.capacity()}};
    ckpt.header["bc_mse"] = bc_mse_;
    ckpt.header["fqe_loss"] = fqe_loss_;
    nn::add_network(ckpt, "policy", policy_.net());
    nn::add_network(ckpt, "critic", critic_.net());
    ckpt.add("critic_ema", ema_.shadow());
    ckpt.add("actor_opt/m", actor_opt_.first_moment());
    ckpt.add("actor_opt/v", actor_opt_.second_moment());
    ckpt.add("critic_opt/m", critic_opt_.first_moment());
    ckpt.add("critic_opt/v", critic_opt_.second_moment());
    const auto& buf = buffer_.storage();
    ckpt.add("buffer", Eigen::Map<const Vector>(buf.data(), buffer_.storage().rows() * buffer_.size()));
    return ckpt;
}

void LeqAgent::restore(const nn::Checkpoint& ckpt)
{
    if (ckpt.header.value("kind", "") != "leq_agent") throw FormatError("checkpoint is not an agent checkpoint");
    AgentConfig cfg;
    from_json(ckpt.header.at("config"), cfg);
    if (!(cfg == config_)) throw PreconditionError("agent checkpoint was written with a different config");
    policy_.net() = nn::get_network(ckpt, "policy");
    critic_.net() = nn::get_network(ckpt, "critic");
    ema_ = nn::EmaTracker(ckpt.get("critic_ema"), config_.ema_decay);
    actor_opt_.restore(ckpt.header.at("actor_opt"), ckpt.get("actor_opt/m"), ckpt.get("actor_opt/v"));
    critic_opt_.restore(ckpt.header.at("critic_opt"), ckpt.get("critic_opt/m"), ckpt.get("critic_opt/v"));
    step_ = ckpt.header.at("step").get<std::int64_t>();
    rng_.deserialize(ckpt.header.at("rng").get<std::string>());
    bc_mse_ = ckpt.header.value("bc_mse", 0.0);
    fqe_loss_ = ckpt.header.value("fqe_loss", 0.0);
    const auto& bh = ckpt.header.at("buffer");
    const auto rows = bh.at("rows").get<Eigen::Index>();
    const auto cap = bh.at("capacity").get<Eigen::Index>();
    const auto size = bh.at("size").get<Eigen::Index>();
    const Vector& flat = ckpt.get("buffer");
    if (flat.size() != rows * size) throw FormatError("agent checkpoint: buffer size mismatch");
    Matrix data = Matrix::Zero(rows, cap);
    data.leftCols(size) = Eigen::Map<const Matrix>(flat.data(), rows, size);
    buffer_.restore(std::move(data), size, bh.at("cursor").get<Eigen::Index>());
}

}  // namespace leq::agent

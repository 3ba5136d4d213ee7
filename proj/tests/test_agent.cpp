#include <doctest.h>

#include <cmath>
#include <numeric>

#include "leq/agent/agent.hpp"
#include "leq/agent/returns.hpp"
#include "leq/errors.hpp"
#include "leq/expectile.hpp"
#include "gradcheck.hpp"
#include "toy.hpp"

using namespace leq;
using namespace leq::agent;

namespace {

// Q(s, a) = w . [s; a] through a single always-active ReLU unit.
Critic linear_critic(int S, int A, const Vector& w)
{
    Critic c(S, A, {1}, 1);
    nn::MlpSpec spec;
    spec.input_dim = S + A;
    spec.hidden_dims = {1};
    spec.use_layernorm = false;
    spec.use_symlog_input = false;
    nn::Mlp net(spec);
    const auto& layout = net.layout();
    net.params().setZero();
    net.params().segment(layout.layers[0].weight, S + A) = w;
    net.params()[layout.layers[0].bias] = 1000.0;
    net.params()[layout.layers[1].weight] = 1.0;
    net.params()[layout.layers[1].bias] = -1000.0;
    c.net() = net;
    return c;
}

Critic constant_critic(int S, int A, double value)
{
    Critic c(S, A, {4}, 1);
    c.params().setZero();
    c.params()[c.net().layout().layers.back().bias] = value;
    return c;
}

RolloutValues rollout(std::vector<double> r, std::vector<double> v, bool terminal)
{
    return RolloutValues{std::move(r), std::move(v), terminal};
}

// Untrained ensemble: smooth random dynamics, enough for gradient checks.
model::EnsembleWorldModel random_model(int S, int A, std::uint64_t seed)
{
    model::EnsembleWorldModel m;
    for (int i = 0; i < 3; ++i) {
        m.add_member(model::DynamicsNet(S, A, {16}, mix_seed(seed, "m" + std::to_string(i))), i, 1.0 + i);
    }
    m.select_elites(2);
    return m;
}

Matrix random_states(int S, int n, std::uint64_t seed)
{
    Rng rng(seed);
    Matrix s(S, n);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.uniform(-1, 1);
    return s;
}

model::ImaginedBatch rollouts(const model::EnsembleWorldModel& m, const Policy& pi, int N, int H, std::uint64_t seed)
{
    Rng rng(seed);
    auto act = [&](const Matrix& s) { return pi.act(s); };
    return model::imagine_rollout(m, act, random_states(m.obs_dim(), N, seed + 1), H, env::TerminationFn{}, 0.0, rng);
}

// One H=1 terminal rollout from s0 with reward r.
model::ImaginedBatch single_step(const Vector& s0, const Vector& a0, double r)
{
    model::ImaginedBatch b;
    b.horizon = 1;
    b.states = {s0, s0};
    b.actions = {a0};
    b.policy_actions = {a0};
    b.rewards = Matrix::Constant(1, 1, r);
    b.eps = {Matrix::Zero(s0.size() + 1, 1)};
    b.members = Eigen::MatrixXi::Zero(1, 1);
    b.length = {1};
    b.terminal = {true};
    b.truncated = {false};
    return b;
}

env::TransitionBatch transitions(const Matrix& s, const Matrix& a, const Matrix& s2, const Vector& r,
                                 const Vector& d)
{
    return env::TransitionBatch{s, a, s2, r, d};
}

env::OfflineDataset dataset_from(const std::vector<env::Transition>& ts)
{
    env::OfflineDataset ds;
    ds.obs_dim = static_cast<int>(ts.front().state.size());
    ds.act_dim = static_cast<int>(ts.front().action.size());
    ds.trajectories.push_back(ts);
    return ds;
}

// Bellman loss of probe against targets built from the fixed critic q.
double frozen_env_loss(const env::TransitionBatch& b, const Critic& q, const Critic& probe, const Policy& pi,
                       double gamma)
{
    const Vector next = q.q(b.next_states, pi.act(b.next_states));
    const Vector y = b.rewards.array() + gamma * (1.0 - b.terminals.array()) * next.array();
    return 0.5 * (probe.q(b.states, b.actions) - y).squaredNorm() / static_cast<double>(y.size());
}

Vector vec(std::initializer_list<double> xs)
{
    Vector v(static_cast<Eigen::Index>(xs.size()));
    std::copy(xs.begin(), xs.end(), v.data());
    return v;
}

AgentConfig small_config()
{
    AgentConfig c;
    c.hidden = {16, 16};
    c.batch_env = 32;
    c.batch_model = 16;
    c.horizon = 5;
    c.expand_horizon = 3;
    c.expand_every = 10;
    c.expand_count = 40;
    c.bc_steps = 50;
    c.fqe_steps = 50;
    return c;
}

const model::EnsembleWorldModel& chain_model()
{
    static const model::EnsembleWorldModel m = [] {
        model::EnsembleConfig c;
        c.members = 3;
        c.elites = 2;
        c.hidden = {32, 32};
        c.steps = 300;
        c.batch_size = 64;
        c.eval_every = 100;
        c.seed = 3;
        return model::train_ensemble(
            env::collect_dataset(env::make_env("dense_chain"), env::Collector::mixed, 10, 4), c);
    }();
    return m;
}

}  // namespace

TEST_CASE("n-step returns")
{
    CHECK(n_step_return(rollout({2.0}, {0.0, 10.0}, false), 0, 1, 0.997) == doctest::Approx(11.97));
    CHECK(n_step_return(rollout({2.0}, {0.0, 10.0}, true), 0, 1, 0.997) == 2.0);
    CHECK(n_step_return(rollout({1, 1, 1}, {0, 0, 0, 0}, false), 0, 3, 1.0) == 3.0);
    CHECK_THROWS_AS(n_step_return(rollout({1, 1}, {0, 0, 0}, false), 1, 2, 0.9), PreconditionError);
    CHECK_THROWS_AS(n_step_return(rollout({1, 1}, {0, 0, 0}, false), 0, 0, 0.9), PreconditionError);

    // Returns that reach a terminal state equal the plain discounted sum.
    const auto r = rollout({0.5, -1.0, 2.0, 0.25}, {7, 8, 9, 10, 1e6}, true);
    for (int t = 0; t < 4; ++t) {
        double sum = 0.0;
        for (int k = t; k < 4; ++k) sum += std::pow(0.9, k - t) * r.rewards[static_cast<std::size_t>(k)];
        CHECK(n_step_return(r, t, 4 - t, 0.9) == doctest::Approx(sum).epsilon(1e-14));
    }
}

TEST_CASE("lambda returns")
{
    const auto three = rollout({1, 1, 1}, {0, 0, 0, 0}, false);
    CHECK(lambda_returns(three, 0.95, 1.0).q[0] == doctest::Approx(5.6075 / 2.8525).epsilon(1e-12));
    CHECK(lambda_returns(three, 0.95, 1.0).q[0] == doctest::Approx(1.96582).epsilon(1e-5));

    const auto r = rollout({0.3, -0.2, 1.1, 0.4}, {2.0, -1.0, 0.5, 3.0, 1.5}, false);
    const auto zero = lambda_returns(r, 0.0, 0.9);
    for (int t = 0; t < 4; ++t) CHECK(zero.q[static_cast<std::size_t>(t)] == doctest::Approx(n_step_return(r, t, 1, 0.9)));
    CHECK(lambda_returns(r, 0.7, 0.9).q[3] == doctest::Approx(n_step_return(r, 3, 1, 0.9)));

    SUBCASE("brute force mixture and the linear form agree")
    {
        for (bool terminal : {false, true}) {
            const auto rr = rollout(r.rewards, r.values, terminal);
            for (double lambda : {0.0, 0.5, 0.95}) {
                const auto table = lambda_returns(rr, lambda, 0.9);
                const auto coef = return_coefficients(4, terminal, lambda, 0.9);
                const Eigen::Map<const Vector> rw(rr.rewards.data(), 4);
                Vector vv = Eigen::Map<const Vector>(rr.values.data(), 5);
                for (int t = 0; t < 4; ++t) {
                    const int n = 4 - t;
                    double num = 0.0, den = 0.0;
                    for (int i = 1; i <= n; ++i) {
                        num += std::pow(lambda, i - 1) * n_step_return(rr, t, i, 0.9);
                        den += std::pow(lambda, i - 1);
                    }
                    const double linear = coef.reward.row(t).dot(rw) + coef.value.row(t).dot(vv);
                    CHECK(table.q[static_cast<std::size_t>(t)] == doctest::Approx(num / den).epsilon(1e-12));
                    CHECK(linear == doctest::Approx(num / den).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("mixture weights are a convex combination")
{
    for (int n = 1; n <= 40; ++n) {
        for (double lambda : {0.0, 0.1, 0.5, 0.9, 0.95, 0.99, 0.999}) {
            const auto w = lambda_weights(n, lambda);
            REQUIRE(w.size() == static_cast<std::size_t>(n));
            CHECK(std::all_of(w.begin(), w.end(), [](double x) { return x >= 0.0; }));
            CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-10);
        }
    }
    CHECK(target_weights(CriticTarget::one_step, 4, 0.9) == std::vector<double>{1, 0, 0, 0});
    CHECK(target_weights(CriticTarget::h_step, 4, 0.9) == std::vector<double>{0, 0, 0, 1});
}

TEST_CASE("critic loss examples")
{
    const Critic q = linear_critic(1, 1, vec({1.0, 0.0}));  // Q(s, a) = s

    SUBCASE("model loss")
    {
        const auto b = single_step(vec({3.0}), vec({0.0}), 1.0);  // Q - target = 3 - 1
        const Matrix targets = targets_from_values(b, Matrix::Constant(2, 1, 99.0), 0.95, 0.9, CriticTarget::lambda);
        CHECK(targets(0, 0) == doctest::Approx(1.0));
        CHECK(critic_loss_model(b, targets, q, 0.1, nullptr) == doctest::Approx(3.6));
        CHECK(critic_loss_model(b, Matrix::Constant(1, 1, 3.0), q, 0.1, nullptr) == doctest::Approx(0.0));
        CHECK(critic_loss_model(b, targets, q, 0.5, nullptr) == doctest::Approx(0.5 * 4.0));
    }
    SUBCASE("env loss")
    {
        const auto b = transitions(vec({5.0}), vec({0.0}), vec({10.0}), vec({1.0}), vec({0.0}));
        const Policy pi(1, 1, {4}, 2);
        CHECK(critic_loss_env(b, q, pi, 0.9, nullptr) == doctest::Approx(12.5));
        const auto term = transitions(vec({5.0}), vec({0.0}), vec({10.0}), vec({1.0}), vec({1.0}));
        CHECK(critic_loss_env(term, q, pi, 0.9, nullptr) == doctest::Approx(0.5 * 16.0));
        // Self-consistent constant on a self-loop: Q = 1 / (1 - 0.9).
        const auto loop = transitions(vec({0.0}), vec({0.0}), vec({0.0}), vec({1.0}), vec({0.0}));
        CHECK(critic_loss_env(loop, constant_critic(1, 1, 10.0), pi, 0.9, nullptr) == doctest::Approx(0.0));
    }
    SUBCASE("ema loss")
    {
        const Matrix s = random_states(1, 5, 1), a = random_states(1, 5, 2);
        CHECK(critic_loss_ema(s, a, q, q.params(), nullptr) == 0.0);
        const Critic up = constant_critic(1, 1, 3.0), zero = constant_critic(1, 1, 0.0), down = constant_critic(1, 1, -3.0);
        CHECK(critic_loss_ema(s, a, up, zero.params(), nullptr) == doctest::Approx(9.0));
        CHECK(critic_loss_ema(s, a, zero, down.params(), nullptr) == doctest::Approx(9.0));
    }
}

TEST_CASE("critic_loss_total weights its components")
{
    const auto m = random_model(2, 2, 1);
    const Policy pi(2, 2, {8}, 3);
    const Critic q(2, 2, {8}, 4);
    const auto batch = rollouts(m, pi, 6, 4, 5);
    const Matrix targets = rollout_targets(batch, q, pi, 0.95, 0.9).targets;
    Rng rng(7);
    const auto env_batch = env::sample_batch(env::flatten(toy::linear_dataset(3, 10, 6)), 8, rng);
    Vector shadow = q.params();
    shadow.array() += 0.01;

    for (auto [beta, omega] : {std::pair{0.25, 1.0}, {0.0, 1.0}, {1.0, 0.0}}) {
        AgentConfig cfg;
        cfg.beta = beta;
        cfg.omega_ema = omega;
        cfg.gamma = 0.9;
        Vector g = Vector::Zero(q.params().size());
        const auto losses = critic_loss_total(batch, targets, env_batch, q, pi, shadow, cfg, &g);
        CHECK(losses.model == doctest::Approx(critic_loss_model(batch, targets, q, cfg.tau, nullptr)));
        CHECK(losses.env == doctest::Approx(critic_loss_env(env_batch, q, pi, 0.9, nullptr)));
        CHECK(losses.ema == doctest::Approx(critic_loss_ema(env_batch.states, env_batch.actions, q, shadow, nullptr)));
        CHECK(losses.total == doctest::Approx(beta * losses.model + (1 - beta) * losses.env + omega * losses.ema));

        const Vector fd = gradcheck::param_fd(q.net(), [&](const nn::Mlp& net) {
            Critic probe = q;
            probe.net() = net;
            return beta * critic_loss_model(batch, targets, probe, cfg.tau, nullptr) +
                   (1 - beta) * frozen_env_loss(env_batch, q, probe, pi, 0.9) +
                   omega * critic_loss_ema(env_batch.states, env_batch.actions, probe, shadow, nullptr);
        });
        CHECK(gradcheck::matches(g, fd));
    }
}

TEST_CASE("critic loss gradients match finite differences")
{
    const auto m = random_model(2, 2, 11);
    const Policy pi(2, 2, {8}, 12);
    const Critic q(2, 2, {8}, 13);
    const auto batch = rollouts(m, pi, 5, 3, 14);
    const Matrix targets = rollout_targets(batch, q, pi, 0.95, 0.9).targets;
    auto check = [&](const std::function<double(const Critic&, Vector*)>& loss) {
        Vector g = Vector::Zero(q.params().size());
        loss(q, &g);
        const Vector fd = gradcheck::param_fd(q.net(), [&](const nn::Mlp& net) {
            Critic probe = q;
            probe.net() = net;
            return loss(probe, nullptr);
        });
        CHECK(gradcheck::matches(g, fd));
    };
    check([&](const Critic& c, Vector* g) { return critic_loss_model(batch, targets, c, 0.1, g); });
    Rng rng(1);
    const auto tb = env::sample_batch(env::flatten(toy::linear_dataset(2, 10, 3)), 6, rng);
    {
        Vector g = Vector::Zero(q.params().size());
        critic_loss_env(tb, q, pi, 0.9, &g);
        const Vector fd = gradcheck::param_fd(q.net(), [&](const nn::Mlp& net) {
            Critic probe = q;
            probe.net() = net;
            return frozen_env_loss(tb, q, probe, pi, 0.9);
        });
        CHECK(gradcheck::matches(g, fd));
    }
    const Vector shadow = Critic(2, 2, {8}, 99).params();
    check([&](const Critic& c, Vector* g) { return critic_loss_ema(tb.states, tb.actions, c, shadow, g); });
}

TEST_CASE("surrogate policy gradient")
{
    const auto m = random_model(2, 2, 21);
    const Policy pi(2, 2, {8}, 22);
    const Critic q(2, 2, {8}, 23);
    const auto batch = rollouts(m, pi, 4, 3, 24);
    const double lambda = 0.9, gamma = 0.95;

    Vector g = Vector::Zero(pi.params().size());
    const auto res = policy_loss_surrogate(m, batch, q, pi, 0.1, lambda, gamma, &g);
    CHECK(res.count == batch.total_steps());

    SUBCASE("matches finite differences with frozen tapes and weights")
    {
        const Vector fd = gradcheck::param_fd(pi.net(), [&](const nn::Mlp& net) {
            Policy probe = pi;
            probe.net() = net;
            return policy_loss_surrogate(m, batch, q, probe, 0.1, lambda, gamma, nullptr, &res.weights).loss;
        });
        CHECK(gradcheck::matches(g, fd));
    }
    SUBCASE("tau = 0.5 is half the unweighted lambda-return gradient")
    {
        Vector g_half = Vector::Zero(g.size()), g_plain = Vector::Zero(g.size());
        const auto half = policy_loss_surrogate(m, batch, q, pi, 0.5, lambda, gamma, &g_half);
        const Matrix ones = Matrix::Ones(batch.horizon, batch.size());
        const auto plain = policy_loss_surrogate(m, batch, q, pi, 0.5, lambda, gamma, &g_plain, &ones);
        CHECK(std::abs(half.loss - 0.5 * plain.loss) < 1e-10);
        CHECK((g_half - 0.5 * g_plain).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("weights carry no gradient")
    {
        Critic moved = q;
        moved.params().array() += 0.3;
        Vector g_live = Vector::Zero(g.size()), g_frozen = Vector::Zero(g.size());
        const auto live = policy_loss_surrogate(m, batch, moved, pi, 0.1, lambda, gamma, &g_live);
        policy_loss_surrogate(m, batch, moved, pi, 0.1, lambda, gamma, &g_frozen, &live.weights);
        CHECK((g_live - g_frozen).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("overestimating critic puts weight 1 - tau everywhere")
    {
        const auto high = linear_critic(2, 2, vec({0, 0, 0, 0}));
        Critic shifted = high;
        shifted.params()[shifted.net().layout().layers[1].bias] = 0.0;  // Q = 1000
        const auto r = policy_loss_surrogate(m, batch, shifted, pi, 0.1, lambda, 0.5, nullptr);
        for (int t = 0; t < batch.horizon; ++t) {
            for (Eigen::Index n = 0; n < batch.size(); ++n) CHECK(r.weights(t, n) == doctest::Approx(0.9));
        }
    }
}

TEST_CASE("policy loss gradients for the ablation modes")
{
    const auto m = random_model(2, 2, 31);
    const Policy pi(2, 2, {8}, 32);
    const Critic q(2, 2, {8}, 33);
    Rng rng(34);
    auto act = [&](const Matrix& s) { return pi.act(s); };
    const auto batch = model::imagine_rollout(m, act, random_states(2, 4, 35), 3, env::TerminationFn{}, 0.5, rng);
    const Matrix targets = rollout_targets(batch, q, pi, 0.9, 0.9).targets;
    auto check = [&](const std::function<double(const Policy&, Vector*)>& loss) {
        Vector g = Vector::Zero(pi.params().size());
        loss(pi, &g);
        const Vector fd = gradcheck::param_fd(pi.net(), [&](const nn::Mlp& net) {
            Policy probe = pi;
            probe.net() = net;
            return loss(probe, nullptr);
        });
        CHECK(gradcheck::matches(g, fd));
    };
    check([&](const Policy& p, Vector* g) { return policy_loss_q_value(batch, q, p, g); });
    // A zero critic keeps the advantages independent of the policy.
    const Critic zero = constant_critic(2, 2, 0.0);
    check([&](const Policy& p, Vector* g) { return awr_policy_loss(batch, targets, zero, p, 1.0, g); });
}

TEST_CASE("awr weights")
{
    const Policy pi(1, 1, {4}, 41);
    const Critic zero = constant_critic(1, 1, 0.0);
    auto b = single_step(vec({0.2}), vec({0.7}), 0.0);
    const double d2 = std::pow(pi.act(b.states[0])(0, 0) - 0.7, 2);
    // Advantage is the target itself with a zero critic.
    CHECK(awr_policy_loss(b, Matrix::Constant(1, 1, 0.0), zero, pi, 1.0, nullptr) == doctest::Approx(d2));
    CHECK(awr_policy_loss(b, Matrix::Constant(1, 1, 5.0), zero, pi, 1e12, nullptr) == doctest::Approx(d2));
    CHECK(awr_policy_loss(b, Matrix::Constant(1, 1, 1.0), zero, pi, 1.0, nullptr) == doctest::Approx(std::exp(1.0) * d2));
    const double clip = std::log(kAwrMaxWeight);
    CHECK(awr_policy_loss(b, Matrix::Constant(1, 1, clip + 1.0), zero, pi, 1.0, nullptr) ==
          doctest::Approx(kAwrMaxWeight * d2));
    CHECK(awr_policy_loss(b, Matrix::Constant(1, 1, 50.0), zero, pi, 1.0, nullptr) ==
          doctest::Approx(kAwrMaxWeight * d2));
}

TEST_CASE("mobile lcb target")
{
    CHECK(mobile_lcb_target({0, 0}, {1, 3}, 1.0, 1.0) == doctest::Approx(1.0));  // population std of {1, 3} is 1
    CHECK(mobile_lcb_target({0, 0}, {1, 3}, 1.0, 0.0) == doctest::Approx(2.0));
    CHECK(mobile_lcb_target({1, 1, 1}, {4, 4, 4}, 0.9, 2.0) == doctest::Approx(1 + 0.9 * 4));
    CHECK_THROWS_AS(mobile_lcb_target({1}, {2}, 0.9, 1.0), PreconditionError);

    // Agreeing members give the plain one-step target.
    const auto m = random_model(2, 2, 51);
    model::EnsembleWorldModel same;
    for (int i = 0; i < 2; ++i) same.add_member(m.member(0), i, 1.0);
    same.select_elites(2);
    const Policy pi(2, 2, {8}, 52);
    const Critic q(2, 2, {8}, 53);
    const auto batch = rollouts(same, pi, 3, 2, 54);
    const Matrix lcb = mobile_lcb_targets(same, batch, q, pi, 0.9, 5.0, env::TerminationFn{});
    const Matrix one = rollout_targets(batch, q, pi, 0.9, 0.9, CriticTarget::one_step).targets;
    CHECK((lcb - one).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("scalar critic is nondecreasing in tau")
{
    Rng rng(61);
    std::vector<double> y(400);
    for (double& v : y) v = rng.normal(1.0, 2.0);
    std::vector<double> fitted;
    for (double tau : {0.1, 0.3, 0.5}) {
        Vector q = Vector::Zero(1);
        nn::Adam opt(1, 0.05);
        for (int it = 0; it < 3000; ++it) {
            opt.set_lr(0.05 * (1.0 - 0.99 * it / 3000.0));
            double g = 0.0;
            for (double v : y) g += expectile_loss_grad(q[0] - v, ExpectileParam{tau}) / static_cast<double>(y.size());
            opt.step(q, Vector::Constant(1, g));
        }
        CHECK(q[0] == doctest::Approx(expectile_of(make_empirical(y), ExpectileParam{tau})).epsilon(1e-3));
        fitted.push_back(q[0]);
    }
    CHECK(fitted[0] < fitted[1]);
    CHECK(fitted[1] < fitted[2]);
}

TEST_CASE("behavior cloning")
{
    toy::Vec k(2);
    k << 0.5, -0.3;
    std::vector<env::Transition> ts;
    Rng rng(71);
    for (int i = 0; i < 500; ++i) {
        Vector s = vec({rng.uniform(-1, 1), rng.uniform(-1, 1)});
        ts.push_back({s, Vector::Constant(1, k.dot(s)), 0.0, s, false});
    }
    const auto data = env::flatten(dataset_from(ts));
    Policy pi(2, 1, {32, 32}, 72);
    Rng r1(73), r2(73);
    Policy copy = pi;
    CHECK(pretrain_bc(data, pi, 0, 64, 1e-3, r1) == doctest::Approx((copy.act(data.states) - data.actions).squaredNorm() / 500));
    CHECK(pi.params() == copy.params());
    const double mse = pretrain_bc(data, pi, 3000, 64, 1e-3, r1);
    MESSAGE("bc mse " << mse);
    CHECK(mse < 1e-3);
    Rng r3(74), r4(74);
    Policy a = copy, b = copy;
    pretrain_bc(data, a, 20, 16, 1e-3, r3);
    pretrain_bc(data, b, 20, 16, 1e-3, r4);
    CHECK(a.params() == b.params());
}

TEST_CASE("fitted Q evaluation")
{
    const Policy pi(2, 1, {8}, 81);
    auto on_policy = [&](const Vector& s) { return Vector(pi.act(s).col(0)); };
    Rng rng(82);

    SUBCASE("self-loop converges to 1 / (1 - gamma)")
    {
        const Vector s = vec({0.3, -0.4});
        const auto data = env::flatten(dataset_from({{s, on_policy(s), 1.0, s, false}}));
        Critic q(2, 1, {32, 32}, 83);
        pretrain_fqe(data, pi, q, 5000, 1, 1e-3, 0.9, rng);
        CHECK(std::abs(q.q(s, on_policy(s))[0] - 10.0) < 0.2);
    }
    SUBCASE("three-state cycle matches value iteration")
    {
        const std::vector<Vector> s{vec({0, 0}), vec({1, 0}), vec({2, 0})};
        const double r[3] = {1.0, 2.0, 0.5};
        std::vector<env::Transition> ts;
        for (int i = 0; i < 3; ++i) ts.push_back({s[i], on_policy(s[i]), r[i], s[(i + 1) % 3], false});
        double v[3] = {0, 0, 0};
        for (int it = 0; it < 2000; ++it) {
            double nv[3];
            for (int i = 0; i < 3; ++i) nv[i] = r[i] + 0.9 * v[(i + 1) % 3];
            std::copy(nv, nv + 3, v);
        }
        Critic q(2, 1, {32, 32}, 84);
        pretrain_fqe(env::flatten(dataset_from(ts)), pi, q, 8000, 3, 1e-3, 0.9, rng);
        for (int i = 0; i < 3; ++i) CHECK(std::abs(q.q(s[i], on_policy(s[i]))[0] - v[i]) < 1e-2);
    }
    SUBCASE("terminal-only and gamma = 0 fit the rewards")
    {
        std::vector<env::Transition> ts;
        for (int i = 0; i < 4; ++i) {
            const Vector st = vec({0.5 * i, 0.1});
            ts.push_back({st, on_policy(st), 1.0 + i, vec({9, 9}), true});
        }
        for (double gamma : {0.0, 0.9}) {
            auto td = ts;
            if (gamma == 0.0) {
                for (auto& t : td) t.terminal = false;
            }
            Critic q(2, 1, {32, 32}, 85);
            const double loss = pretrain_fqe(env::flatten(dataset_from(td)), pi, q, 3000, 4, 1e-3, gamma, rng);
            CHECK(loss < 1e-4);
            for (const auto& t : td) CHECK(std::abs(q.q(t.state, t.action)[0] - t.reward) < 1e-2);
        }
    }
}

TEST_CASE("model state buffer")
{
    ModelStateBuffer buf(1, 3);
    for (int i = 0; i < 5; ++i) buf.insert(Vector::Constant(1, i));
    CHECK(buf.size() == 3);
    CHECK(buf.cursor() == 2);
    CHECK(buf.storage()(0, 0) == 3.0);
    CHECK(buf.storage()(0, 1) == 4.0);
    CHECK(buf.storage()(0, 2) == 2.0);
    CHECK_THROWS_AS(buf.insert(Vector::Zero(2)), DimensionMismatch);
    Rng rng(1);
    const Matrix draw = buf.sample(50, rng);
    CHECK(draw.minCoeff() >= 2.0);
    CHECK(draw.maxCoeff() <= 4.0);
    CHECK_THROWS_AS(ModelStateBuffer(1, 2).sample(1, rng), PreconditionError);
}

TEST_CASE("dataset expansion")
{
    const auto& m = chain_model();
    const auto data = env::flatten(env::collect_dataset(env::make_env("dense_chain"), env::Collector::random, 3, 9));
    const Policy pi(2, 1, {8}, 91);
    AgentConfig cfg = small_config();
    cfg.expand_count = 25;

    SUBCASE("one-step expansion inserts dataset states only")
    {
        cfg.expand_horizon = 1;
        ModelStateBuffer buf(2, 100);
        Rng rng(92);
        expand_dataset(buf, data, m, pi, cfg, env::TerminationFn{}, rng);
        CHECK(buf.size() == 25);
        for (Eigen::Index i = 0; i < buf.size(); ++i) {
            bool found = false;
            for (Eigen::Index j = 0; j < data.size() && !found; ++j) found = buf.storage().col(i) == data.states.col(j);
            CHECK(found);
        }
    }
    SUBCASE("noise-free expansion follows the policy rollout")
    {
        cfg.expand_horizon = 3;
        cfg.sigma_exp = 0.0;
        cfg.batch_model = 25;
        cfg.expand_count = 75;
        ModelStateBuffer buf(2, 100);
        Rng a(93), b(93);
        expand_dataset(buf, data, m, pi, cfg, env::TerminationFn{}, a);
        // Replay the same draws: starts first, then the rollout stream.
        Matrix starts(2, 25);
        for (int i = 0; i < 25; ++i) starts.col(i) = data.states.col(static_cast<Eigen::Index>(b.below(static_cast<std::uint64_t>(data.size()))));
        auto act = [&](const Matrix& s) { return pi.act(s); };
        const auto roll = model::imagine_rollout(m, act, starts, 3, env::TerminationFn{}, 0.0, b);
        for (int t = 0; t < 3; ++t) CHECK(buf.storage().middleCols(25 * t, 25) == roll.states[static_cast<std::size_t>(t)]);
    }
}

TEST_CASE("agent train_step")
{
    const auto spec = env::make_env("dense_chain");
    const auto ds = env::collect_dataset(spec, env::Collector::mixed, 10, 4);
    const auto& m = chain_model();

    SUBCASE("identical seeds give identical traces")
    {
        LeqAgent a(small_config(), ds, spec, 5), b(small_config(), ds, spec, 5);
        a.pretrain();
        b.pretrain();
        for (int i = 0; i < 12; ++i) {
            const auto ma = a.train_step(m), mb = b.train_step(m);
            CHECK(metrics_row(ma, 0, 0) == metrics_row(mb, 0, 0));
        }
        CHECK(a.policy().params() == b.policy().params());
        CHECK(a.buffer().size() == 80);
    }
    SUBCASE("zero learning rates leave the parameters alone")
    {
        AgentConfig cfg = small_config();
        cfg.lr_actor = 0.0;
        cfg.lr_critic = 0.0;
        LeqAgent a(cfg, ds, spec, 6);
        a.pretrain();
        const Vector p = a.policy().params(), c = a.critic().params(), e = a.ema().shadow();
        for (int i = 0; i < 3; ++i) a.train_step(m);
        CHECK(a.step() == 3);
        CHECK(a.policy().params() == p);
        CHECK(a.critic().params() == c);
        CHECK(a.ema().shadow() == e);
    }
    SUBCASE("beta = 0 continues fitted Q evaluation")
    {
        AgentConfig cfg = small_config();
        cfg.beta = 0.0;
        cfg.lr_actor = 0.0;
        cfg.omega_ema = 0.0;
        cfg.use_expansion = false;
        cfg.horizon = 1;
        cfg.gamma = 0.9;
        cfg.lr_critic = 1e-3;
        LeqAgent a(cfg, ds, spec, 7);
        a.pretrain();
        const env::TransitionBatch all{a.data().states, a.data().actions, a.data().next_states, a.data().rewards,
                                       a.data().terminals};
        const double before = critic_loss_env(all, a.critic(), a.policy(), 0.9, nullptr);
        for (int i = 0; i < 1000; ++i) a.train_step(m);
        const double after = critic_loss_env(all, a.critic(), a.policy(), 0.9, nullptr);
        MESSAGE("env loss " << before << " -> " << after);
        CHECK(after < before);
    }
    SUBCASE("checkpoint resume reproduces the trace")
    {
        LeqAgent a(small_config(), ds, spec, 8);
        a.pretrain();
        for (int i = 0; i < 7; ++i) a.train_step(m);
        const auto ckpt = nn::Checkpoint::decode(a.checkpoint().encode());
        LeqAgent b(small_config(), ds, spec, 999);
        b.restore(ckpt);
        for (int i = 0; i < 6; ++i) CHECK(metrics_row(a.train_step(m), 0, 0) == metrics_row(b.train_step(m), 0, 0));
        AgentConfig other = small_config();
        other.tau = 0.3;
        LeqAgent c(other, ds, spec, 8);
        CHECK_THROWS_AS(c.restore(ckpt), PreconditionError);
    }
    SUBCASE("ablation modes run")
    {
        for (int mode = 0; mode < 3; ++mode) {
            AgentConfig cfg = small_config();
            cfg.policy_update = static_cast<PolicyUpdate>(mode);
            cfg.conservatism = mode == 1 ? Conservatism::mobile_lcb : Conservatism::none;
            cfg.critic_target = static_cast<CriticTarget>(mode);
            LeqAgent a(cfg, ds, spec, 9);
            a.pretrain();
            for (int i = 0; i < 3; ++i) CHECK(std::isfinite(a.train_step(m).critic.total));
        }
    }
}

TEST_CASE("evaluate_policy")
{
    const auto spec = env::make_env("point_maze_u");
    // The scripted expert needs per-episode waypoint state; track it by column.
    std::vector<std::size_t> wp(20, 0);
    const ActionFn expert = [&](const Matrix& s) {
        Matrix a(2, s.cols());
        for (Eigen::Index i = 0; i < s.cols(); ++i) a.col(i) = env::expert_action(spec, s.col(i), wp[static_cast<std::size_t>(i)]);
        return a;
    };
    const auto res = evaluate_policy(expert, spec, 20, 3);
    CHECK(res.success_rate >= 0.9);
    CHECK(res.returns.size() == 20);

    const Policy random(2, 2, {16}, 5);
    const auto spiral = env::make_env("point_maze_large_spiral");
    const auto r1 = evaluate_policy([&](const Matrix& s) { return random.act(s); }, spiral, 10, 7);
    const auto r2 = evaluate_policy([&](const Matrix& s) { return random.act(s); }, spiral, 10, 7);
    CHECK(r1.success_rate <= 0.1);
    CHECK(r1.returns == r2.returns);
    CHECK_THROWS_AS(evaluate_policy(expert, spec, 0, 1), PreconditionError);
}

TEST_CASE("agent config")
{
    const AgentConfig d;
    CHECK(d.tau == 0.1);
    CHECK(d.expand_horizon == 5);
    CHECK(AgentConfig::paper_defaults().expand_count == 50000);
    AgentConfig back;
    from_json(nlohmann::json(d), back);
    CHECK(back == d);
    CHECK_THROWS_AS(from_json(nlohmann::json{{"tua", 0.2}}, back), UsageError);
    AgentConfig bad;
    bad.gamma = 1.0;
    CHECK_THROWS_AS(bad.validate(), PreconditionError);
    bad = AgentConfig{};
    bad.tau = 0.0;
    CHECK_THROWS(bad.validate());
}

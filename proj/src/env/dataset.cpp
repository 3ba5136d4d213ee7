#include "leq/env/dataset.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "leq/binary_io.hpp"
#include "leq/errors.hpp"

namespace leq::env {

namespace {

constexpr std::string_view kMagic = "LEQD";
constexpr double kMediumNoise = 0.5;

Vector clip_unit(Vector a) { return a.cwiseMax(-1.0).cwiseMin(1.0); }

Trajectory rollout(const EnvSpec& spec, Collector kind, Rng& rng)
{
    Trajectory traj;
    Vector s = reset(spec, rng);
    std::size_t waypoint = 0;
    for (int t = 0; t < spec.horizon; ++t) {
        Vector a(spec.act_dim());
        if (kind == Collector::random) {
            for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = rng.uniform(-1.0, 1.0);
        } else {
            a = expert_action(spec, s, waypoint);
            if (kind == Collector::medium) {
                for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += rng.normal(0.0, kMediumNoise);
                a = clip_unit(a);
            }
        }
        auto step = env_step(spec, s, a);
        double reward = step.reward;
        if (spec.id == EnvId::point_maze) reward = step.terminal ? 1.0 : 0.0;
        traj.push_back({s, a, reward, step.next_state, step.terminal});
        if (step.terminal) break;
        s = std::move(step.next_state);
    }
    return traj;
}

}  // namespace

std::string to_string(RewardNormalization mode)
{
    switch (mode) {
    case RewardNormalization::none: return "none";
    case RewardNormalization::minmax_return: return "minmax_return";
    case RewardNormalization::sparse_shift: return "sparse_shift";
    }
    return "none";
}

RewardNormalization normalization_from_string(const std::string& name)
{
    if (name == "none") return RewardNormalization::none;
    if (name == "minmax_return") return RewardNormalization::minmax_return;
    if (name == "sparse_shift") return RewardNormalization::sparse_shift;
    throw UsageError("unknown reward normalization '" + name + "'");
}

std::string to_string(Collector c)
{
    switch (c) {
    case Collector::random: return "random";
    case Collector::medium: return "medium";
    case Collector::expert: return "expert";
    case Collector::mixed: return "mixed";
    }
    return "random";
}

Collector collector_from_string(const std::string& name)
{
    if (name == "random") return Collector::random;
    if (name == "medium") return Collector::medium;
    if (name == "expert") return Collector::expert;
    if (name == "mixed") return Collector::mixed;
    throw UsageError("unknown collector '" + name + "'");
}

std::size_t OfflineDataset::num_transitions() const
{
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.size();
    return n;
}

std::vector<double> OfflineDataset::returns() const
{
    std::vector<double> out;
    out.reserve(trajectories.size());
    for (const auto& traj : trajectories) {
        double r = 0.0;
        for (const auto& tr : traj) r += tr.reward;
        out.push_back(r);
    }
    return out;
}

Vector expert_action(const EnvSpec& spec, const Vector& state, std::size_t& waypoint)
{
    if (spec.id == EnvId::dense_chain) return Vector::Ones(1);
    // Advance past reached waypoints, then steer proportionally toward the current one.
    constexpr double kReach = 0.4;
    constexpr double kGain = 4.0;
    while (waypoint + 1 < spec.waypoints.size() && (spec.waypoints[waypoint] - state).norm() < kReach) ++waypoint;
    return clip_unit(kGain * (spec.waypoints[waypoint] - state));
}

OfflineDataset collect_dataset(const EnvSpec& spec, Collector collector, int n_trajectories, std::uint64_t seed)
{
    if (n_trajectories < 1) throw PreconditionError("collect_dataset: n_trajectories must be >= 1");
    OfflineDataset ds;
    ds.obs_dim = spec.obs_dim();
    ds.act_dim = spec.act_dim();
    ds.env_id = spec.name;
    ds.collector = to_string(collector);
    ds.seed = seed;
    const Rng root(seed);
    for (int i = 0; i < n_trajectories; ++i) {
        Rng rng = root.fork("trajectory/" + std::to_string(i));
        Collector kind = collector;
        if (collector == Collector::mixed) kind = rng.uniform() < 0.5 ? Collector::random : Collector::medium;
        ds.trajectories.push_back(rollout(spec, kind, rng));
    }
    return ds;
}

OfflineDataset normalize_rewards(const OfflineDataset& dataset, RewardNormalization mode)
{
    OfflineDataset out = dataset;
    out.normalization = mode;
    if (mode == RewardNormalization::none) return out;
    if (mode == RewardNormalization::sparse_shift) {
        for (auto& traj : out.trajectories) {
            for (auto& tr : traj) tr.reward -= 1.0;
        }
        return out;
    }
    const auto rets = dataset.returns();
    if (rets.size() < 2) throw PreconditionError("minmax_return needs at least two trajectories");
    const auto [lo, hi] = std::minmax_element(rets.begin(), rets.end());
    const double spread = *hi - *lo;
    if (!(spread > 0.0)) throw PreconditionError("minmax_return: trajectory returns have zero spread");
    for (auto& traj : out.trajectories) {
        for (auto& tr : traj) tr.reward /= spread;
    }
    return out;
}

std::string encode_dataset(const OfflineDataset& ds)
{
    const nlohmann::json meta{{"obs_dim", ds.obs_dim},
                              {"act_dim", ds.act_dim},
                              {"normalization", to_string(ds.normalization)},
                              {"env_id", ds.env_id},
                              {"collector", ds.collector},
                              {"seed", ds.seed},
                              {"n_trajectories", ds.trajectories.size()}};
    const std::string text = meta.dump();
    io::ByteWriter w;
    w.put_bytes(kMagic);
    w.put_u32(kDatasetVersion);
    w.put_u64(text.size());
    w.put_bytes(text);
    for (const auto& traj : ds.trajectories) {
        w.put_u64(traj.size());
        for (const auto& tr : traj) w.put_f64s({tr.state.data(), static_cast<std::size_t>(tr.state.size())});
        for (const auto& tr : traj) w.put_f64s({tr.action.data(), static_cast<std::size_t>(tr.action.size())});
        for (const auto& tr : traj) w.put_f64(tr.reward);
        for (const auto& tr : traj) {
            w.put_f64s({tr.next_state.data(), static_cast<std::size_t>(tr.next_state.size())});
        }
        for (const auto& tr : traj) w.put_f64(tr.terminal ? 1.0 : 0.0);
    }
    return io::seal_with_crc(w);
}

OfflineDataset decode_dataset(std::string_view bytes)
{
    io::ByteReader r(io::unseal_crc(bytes));
    if (r.get_bytes(4) != kMagic) throw FormatError("not a dataset file (bad magic)");
    const auto version = r.get_u32();
    if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
    const auto len = r.get_u64();
    if (len > r.remaining()) throw FormatError("truncated file");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(r.get_bytes(len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset metadata: ") + e.what());
    }
    OfflineDataset ds;
    ds.obs_dim = meta.at("obs_dim").get<int>();
    ds.act_dim = meta.at("act_dim").get<int>();
    ds.normalization = normalization_from_string(meta.at("normalization").get<std::string>());
    ds.env_id = meta.at("env_id").get<std::string>();
    ds.collector = meta.at("collector").get<std::string>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    const auto n_traj = meta.at("n_trajectories").get<std::size_t>();
    const auto S = static_cast<std::size_t>(ds.obs_dim);
    const auto A = static_cast<std::size_t>(ds.act_dim);
    for (std::size_t k = 0; k < n_traj; ++k) {
        const auto T = r.get_u64();
        if (T > r.remaining() / 8) throw FormatError("truncated file");
        const auto states = r.get_f64s(T * S);
        const auto actions = r.get_f64s(T * A);
        const auto rewards = r.get_f64s(T);
        const auto next = r.get_f64s(T * S);
        const auto terms = r.get_f64s(T);
        Trajectory traj(T);
        for (std::size_t t = 0; t < T; ++t) {
            traj[t].state = Eigen::Map<const Vector>(states.data() + t * S, static_cast<Eigen::Index>(S));
            traj[t].action = Eigen::Map<const Vector>(actions.data() + t * A, static_cast<Eigen::Index>(A));
            traj[t].reward = rewards[t];
            traj[t].next_state = Eigen::Map<const Vector>(next.data() + t * S, static_cast<Eigen::Index>(S));
            traj[t].terminal = terms[t] != 0.0;
        }
        ds.trajectories.push_back(std::move(traj));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes in dataset file");
    return ds;
}

void save_dataset(const OfflineDataset& dataset, const std::string& path) { io::write_file(path, encode_dataset(dataset)); }

OfflineDataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

TransitionTable flatten(const OfflineDataset& ds)
{
    const auto n = static_cast<Eigen::Index>(ds.num_transitions());
    TransitionTable t;
    t.states.resize(ds.obs_dim, n);
    t.actions.resize(ds.act_dim, n);
    t.rewards.resize(n);
    t.next_states.resize(ds.obs_dim, n);
    t.terminals.resize(n);
    Eigen::Index i = 0;
    for (const auto& traj : ds.trajectories) {
        for (const auto& tr : traj) {
            t.states.col(i) = tr.state;
            t.actions.col(i) = tr.action;
            t.rewards[i] = tr.reward;
            t.next_states.col(i) = tr.next_state;
            t.terminals[i] = tr.terminal ? 1.0 : 0.0;
            ++i;
        }
    }
    return t;
}

TransitionBatch gather(const TransitionTable& table, const std::vector<Eigen::Index>& indices)
{
    const auto n = static_cast<Eigen::Index>(indices.size());
    TransitionBatch b;
    b.states.resize(table.states.rows(), n);
    b.actions.resize(table.actions.rows(), n);
    b.next_states.resize(table.next_states.rows(), n);
    b.rewards.resize(n);
    b.terminals.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto i = indices[static_cast<std::size_t>(k)];
        b.states.col(k) = table.states.col(i);
        b.actions.col(k) = table.actions.col(i);
        b.next_states.col(k) = table.next_states.col(i);
        b.rewards[k] = table.rewards[i];
        b.terminals[k] = table.terminals[i];
    }
    return b;
}

TransitionBatch sample_batch(const TransitionTable& table, int batch_size, Rng& rng)
{
    if (table.size() == 0) throw PreconditionError("sample_batch: empty table");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(batch_size));
    for (auto& i : idx) i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(table.size())));
    return gather(table, idx);
}

}  // namespace leq::env

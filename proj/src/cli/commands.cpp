#include "leq/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "leq/agent/agent.hpp"
#include "leq/binary_io.hpp"
#include "leq/env/dataset.hpp"
#include "leq/errors.hpp"
#include "leq/theory/theory.hpp"

#ifndef LEQ_BUILD_ID
#define LEQ_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;

namespace leq::cli {

namespace {

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void ensure_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create directory " + dir + ": " + ec.message());
}

std::string utc_now()
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void write_json(const std::string& path, const nlohmann::json& j) { io::write_file(path, j.dump(2) + "\n"); }

// Rows of an existing metrics file up to and including `step`.
std::string metrics_prefix(const std::string& path, std::int64_t step)
{
    std::istringstream in(io::read_file(path));
    std::string line, out;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (!header && std::stoll(line.substr(0, line.find(','))) > step) break;
        out += line + "\n";
        header = false;
    }
    return out;
}

EvalPoint evaluate(const agent::LeqAgent& a, const env::EnvSpec& spec, const RunConfig& c)
{
    const auto r = agent::evaluate_policy(a.action_fn(), spec, c.eval_episodes, mix_seed(c.seed, "eval"));
    return {a.step(), r.mean_return, r.success_rate};
}

bool better(const EvalPoint& a, const EvalPoint& b)
{
    if (a.success_rate != b.success_rate) return a.success_rate > b.success_rate;
    return a.mean_return > b.mean_return;
}

// Eval points recorded in metrics rows (the last two columns).
std::vector<EvalPoint> eval_points(const std::string& csv)
{
    std::vector<EvalPoint> out;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() == 12 && !f[10].empty()) out.push_back({std::stoll(f[0]), std::stod(f[10]), std::stod(f[11])});
    }
    return out;
}

double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Population standard deviation.
double std_of(const std::vector<double>& v)
{
    if (v.empty()) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

std::string build_id() { return LEQ_BUILD_ID; }

int thread_cap()
{
    const char* v = std::getenv("LEQ_LAB_THREADS");
    if (v == nullptr || *v == '\0') return 1;
    std::size_t used = 0;
    int n = 0;
    try {
        n = std::stoi(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != std::string(v).size() || n < 1) {
        throw UsageError(std::string("LEQ_LAB_THREADS must be a positive integer, got '") + v + "'");
    }
    return n;
}

void to_json(nlohmann::json& j, const EvalPoint& p)
{
    j = {{"step", p.step}, {"mean_return", p.mean_return}, {"success_rate", p.success_rate}};
}

void cmd_gen_data(const GenDataArgs& args, std::ostream& log)
{
    if (args.out.empty()) throw UsageError("gen-data: --out is required");
    if (args.n < 1) throw UsageError("gen-data: --n must be >= 1");
    const auto spec = env::make_env(args.env);
    const auto collector = env::collector_from_string(args.collector);
    auto ds = env::collect_dataset(spec, collector, args.n, args.seed);
    std::size_t successes = 0;
    for (const auto& t : ds.trajectories) successes += (!t.empty() && t.back().terminal) ? 1 : 0;
    const auto mode = args.normalization == "auto"
                          ? (spec.id == env::EnvId::point_maze ? env::RewardNormalization::sparse_shift
                                                               : env::RewardNormalization::none)
                          : env::normalization_from_string(args.normalization);
    ds = env::normalize_rewards(ds, mode);
    env::save_dataset(ds, args.out);
    const auto returns = ds.returns();
    log << std::setprecision(6) << "trajectories " << ds.trajectories.size() << "\n"
        << "transitions " << ds.num_transitions() << "\n"
        << "mean_return " << mean_of(returns) << "\n";
    if (spec.id == env::EnvId::point_maze) {
        log << "collector_success_rate " << static_cast<double>(successes) / static_cast<double>(ds.trajectories.size())
            << "\n";
    }
    log << "normalization " << env::to_string(mode) << "\nwrote " << args.out << "\n";
}

TrainResult cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& log)
{
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const int threads = thread_cap();
    const auto spec = env::make_env(config.env);
    const auto dataset = env::load_dataset(config.dataset);
    if (dataset.env_id != config.env) {
        throw UsageError("dataset " + config.dataset + " was collected on " + dataset.env_id + ", config says " +
                         config.env);
    }
    ensure_dir(config.out_dir);
    nlohmann::json effective = config;
    write_json(path_in(config.out_dir, "config.json"), effective);
    auto say = [&](const std::string& s) {
        if (!options.quiet) log << s << std::endl;
    };
    const bool resuming = !options.resume.empty();

    // World model.
    model::EnsembleWorldModel wm;
    const std::string wm_path = path_in(config.out_dir, "world_model.leqc");
    if (config.has_stage(Stage::world_model) && !resuming) {
        auto mc = config.world_model;
        mc.seed = mix_seed(config.seed, "world_model");
        say("training world model (" + std::to_string(mc.members) + " members)");
        wm = model::train_ensemble(dataset, mc);
        wm.checkpoint().save(wm_path);
    } else {
        const std::string from = config.world_model_path.empty() ? wm_path : config.world_model_path;
        wm = model::EnsembleWorldModel::from_checkpoint(nn::Checkpoint::load(from));
    }

    agent::LeqAgent a(config.agent, dataset, spec, config.seed);
    TrainResult res;
    const std::string metrics_path = path_in(config.out_dir, "metrics.csv");
    std::string metrics;
    const std::string report_path = path_in(config.out_dir, "report.json");
    if (resuming) {
        a.restore(nn::Checkpoint::load(options.resume));
        metrics = metrics_prefix(metrics_path, a.step());
        say("resumed at step " + std::to_string(a.step()));
    } else {
        if (config.has_stage(Stage::pretrain)) {
            say("pretraining (BC + FQE)");
            a.pretrain();
            a.checkpoint().save(path_in(config.out_dir, "agent_pretrained.leqc"));
        } else if (!config.agent_path.empty()) {
            a.restore(nn::Checkpoint::load(config.agent_path));
        }
        metrics = agent::metrics_header() + "\n";
    }
    if (resuming && fs::exists(report_path)) {
        const auto prev = nlohmann::json::parse(io::read_file(report_path)).at("pretrain_eval");
        res.pretrain_eval = {prev.at("step").get<std::int64_t>(), prev.at("mean_return").get<double>(),
                             prev.at("success_rate").get<double>()};
    } else {
        res.pretrain_eval = evaluate(a, spec, config);
    }
    res.best_eval = res.pretrain_eval;
    res.final_eval = res.pretrain_eval;
    for (const auto& e : eval_points(metrics)) {
        res.final_eval = e;
        if (better(e, res.best_eval)) res.best_eval = e;
    }
    io::write_file(metrics_path, metrics);

    nlohmann::json report = {{"build_id", build_id()},
                             {"env", config.env},
                             {"seed", config.seed},
                             {"config", effective},
                             {"world_model", {{"elites", wm.elites()}, {"validation_nll", wm.validation_nll()}}},
                             {"bc_mse", a.bc_mse()},
                             {"fqe_loss", a.fqe_loss()}};
    auto finish = [&](const std::string& status) {
        report["status"] = status;
        report["steps"] = a.step();
        report["pretrain_eval"] = res.pretrain_eval;
        report["final_eval"] = res.final_eval;
        report["best_eval"] = res.best_eval;
        report["meta"] = {{"threads", threads},
                          {"finished_at", utc_now()},
                          {"wall_seconds",
                           std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
        write_json(report_path, report);
        res.steps = a.step();
        res.report = report;
    };

    if (!config.has_stage(Stage::train)) {
        finish("pretrained");
        return res;
    }

    std::ofstream csv(metrics_path, std::ios::app);
    if (!csv) throw Error("cannot open " + metrics_path);
    const std::int64_t total = config.agent.iterations;
    const std::int64_t stop = options.stop_after >= 0 ? std::min(options.stop_after, total) : total;
    const std::string last_path = path_in(config.out_dir, "agent_last.leqc");
    while (a.step() < stop) {
        agent::TrainMetrics m;
        try {
            m = a.train_step(wm);
        } catch (const TrainingDivergence& e) {
            csv.flush();
            a.checkpoint().save(path_in(config.out_dir, "diverged.leqc"));
            report["error"] = e.what();
            finish("diverged");
            throw;
        }
        const bool eval_now = m.step % config.eval_every == 0 || m.step == total;
        double ret = std::nan(""), succ = std::nan("");
        if (eval_now) {
            const auto e = evaluate(a, spec, config);
            ret = e.mean_return;
            succ = e.success_rate;
            res.final_eval = e;
            if (better(e, res.best_eval)) res.best_eval = e;
            std::ostringstream os;
            os << "step " << m.step << " return " << ret << " success " << succ << " q " << m.mean_q;
            say(os.str());
        }
        if (eval_now || m.step % config.log_every == 0) csv << agent::metrics_row(m, ret, succ) << "\n";
        if (m.step % config.checkpoint_every == 0 || m.step == stop) {
            csv.flush();
            a.checkpoint().save(last_path);
        }
    }
    csv.flush();
    if (a.step() < total) {
        finish("stopped");
        return res;
    }
    if (total == 0) a.checkpoint().save(last_path);
    finish("completed");
    return res;
}

TrainResult cmd_pretrain(RunConfig config, std::ostream& log)
{
    config.stages = {Stage::world_model, Stage::pretrain};
    return cmd_train(config, TrainOptions{}, log);
}

EvalPoint cmd_eval(const EvalArgs& args, std::ostream& log)
{
    if (args.agent.empty()) throw UsageError("eval: --agent is required");
    if (args.episodes < 1) throw UsageError("eval: --episodes must be >= 1");
    const auto spec = env::make_env(args.env);
    const auto ckpt = nn::Checkpoint::load(args.agent);
    if (ckpt.header.value("kind", "") != "leq_agent") throw FormatError(args.agent + " is not an agent checkpoint");
    agent::Policy policy(spec.obs_dim(), spec.act_dim(), {1}, 0);
    policy.net() = nn::get_network(ckpt, "policy");
    if (policy.obs_dim() != spec.obs_dim() || policy.act_dim() != spec.act_dim()) {
        throw DimensionMismatch("eval: policy does not match env " + args.env);
    }
    const auto r = agent::evaluate_policy([&](const agent::Matrix& s) { return policy.act(s); }, spec, args.episodes,
                                          mix_seed(args.seed, "eval"));
    EvalPoint p{ckpt.header.value("step", std::int64_t{0}), r.mean_return, r.success_rate};
    nlohmann::json j = p;
    j["episodes"] = args.episodes;
    j["env"] = args.env;
    j["build_id"] = build_id();
    log << j.dump(2) << "\n";
    return p;
}

AblationMatrix ablation_matrix_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw UsageError("ablation matrix must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "base" && key != "seeds" && key != "cells") throw UsageError("unknown ablation key '" + key + "'");
    }
    AblationMatrix m;
    try {
        if (j.contains("base")) from_json(j.at("base"), m.base);
        if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        for (const auto& c : j.at("cells")) {
            AblationCell cell;
            cell.name = c.at("name").get<std::string>();
            for (const auto& [key, value] : c.items()) {
                if (key == "name") continue;
                if (key == "agent") {
                    cell.agent.update(value);
                } else {
                    cell.agent[key] = value;
                }
            }
            agent::AgentConfig probe;
            agent::from_json(cell.agent, probe);  // reject unknown keys early
            m.cells.push_back(std::move(cell));
        }
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("ablation matrix: ") + e.what());
    }
    if (m.seeds.empty() || m.cells.empty()) throw UsageError("ablation matrix needs at least one seed and one cell");
    return m;
}

AblationMatrix load_ablation_matrix(const std::string& path)
{
    if (!fs::exists(path)) throw UsageError("ablation matrix " + path + " does not exist");
    try {
        return ablation_matrix_from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError("ablation matrix " + path + ": " + e.what());
    }
}

std::vector<AblationRow> cmd_ablate(const AblationMatrix& matrix, const std::string& out_csv, std::ostream& log)
{
    std::vector<AblationRow> rows;
    const std::string root = matrix.base.out_dir;
    ensure_dir(root);
    std::vector<std::string> wm_paths;
    for (std::uint64_t seed : matrix.seeds) {
        const std::string p = path_in(root, "world_model_seed" + std::to_string(seed) + ".leqc");
        if (matrix.base.has_stage(Stage::world_model)) {
            auto mc = matrix.base.world_model;
            mc.seed = mix_seed(seed, "world_model");
            log << "world model for seed " << seed << std::endl;
            model::train_ensemble(env::load_dataset(matrix.base.dataset), mc).checkpoint().save(p);
            wm_paths.push_back(p);
        } else {
            wm_paths.push_back(matrix.base.world_model_path);
        }
    }
    for (const auto& cell : matrix.cells) {
        AblationRow row;
        row.name = cell.name;
        RunConfig cfg = matrix.base;
        nlohmann::json aj = cfg.agent;
        aj.update(cell.agent);
        agent::from_json(aj, cfg.agent);
        row.conservatism = agent::to_string(cfg.agent.conservatism);
        row.critic_target = agent::to_string(cfg.agent.critic_target);
        row.policy_update = agent::to_string(cfg.agent.policy_update);
        std::vector<double> returns, successes;
        bool diverged = false, failed = false;
        for (std::size_t k = 0; k < matrix.seeds.size(); ++k) {
            ++row.runs;
            cfg.seed = matrix.seeds[k];
            cfg.out_dir = path_in(path_in(root, cell.name), "seed" + std::to_string(cfg.seed));
            cfg.stages.erase(std::remove(cfg.stages.begin(), cfg.stages.end(), Stage::world_model), cfg.stages.end());
            cfg.world_model_path = wm_paths[k];
            try {
                const auto r = cmd_train(cfg, TrainOptions{{}, -1, true}, log);
                returns.push_back(r.final_eval.mean_return);
                successes.push_back(r.final_eval.success_rate);
                ++row.completed;
            } catch (const TrainingDivergence& e) {
                diverged = true;
                log << cell.name << " seed " << cfg.seed << " diverged: " << e.what() << std::endl;
            } catch (const Error& e) {
                failed = true;
                log << cell.name << " seed " << cfg.seed << " failed: " << e.what() << std::endl;
            }
        }
        row.mean_return = mean_of(returns);
        row.std_return = std_of(returns);
        row.mean_success = mean_of(successes);
        row.std_success = std_of(successes);
        row.status = diverged ? "diverged" : failed ? "failed" : "ok";
        log << cell.name << ": success " << row.mean_success << " +- " << row.std_success << " return "
            << row.mean_return << " +- " << row.std_return << " [" << row.status << "]" << std::endl;
        rows.push_back(row);
    }
    io::write_file(out_csv, ablation_csv(rows));
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows)
{
    std::ostringstream os;
    os << std::setprecision(17);
    os << "cell,conservatism,critic_target,policy_update,runs,completed,mean_return,std_return,mean_success,"
          "std_success,status\n";
    for (const auto& r : rows) {
        os << r.name << ',' << r.conservatism << ',' << r.critic_target << ',' << r.policy_update << ',' << r.runs
           << ',' << r.completed << ',' << r.mean_return << ',' << r.std_return << ',' << r.mean_success << ','
           << r.std_success << ',' << r.status << '\n';
    }
    return os.str();
}

int cmd_verify_theory(const VerifyArgs& args, std::ostream& log)
{
    if (args.trials < 1) throw UsageError("verify-theory: --trials must be >= 1");
    ensure_dir(args.out_dir);
    const auto suite = theory::monte_carlo_theorem_suite(args.trials, args.seed);
    theory::ScanConfig normal, uniform;
    normal.distribution = Normal{};
    uniform.distribution = Uniform{};
    const auto rn = theory::exception_region_scan(normal);
    const auto ru = theory::exception_region_scan(uniform);
    theory::write_scan_csv(rn, path_in(args.out_dir, "scan_normal.csv"));
    theory::write_scan_csv(ru, path_in(args.out_dir, "scan_uniform.csv"));

    const bool ok = suite.passed() && rn.exception_count == 0;
    nlohmann::json report = {{"build_id", build_id()},
                             {"trials", args.trials},
                             {"seed", args.seed},
                             {"theorem_suite", suite},
                             {"scan_normal", theory::scan_summary(rn)},
                             {"scan_uniform", theory::scan_summary(ru)},
                             {"uniform_reference", {{"count", 39}, {"band", {30, 50}}}},
                             {"passed", ok}};
    write_json(path_in(args.out_dir, "report.json"), report);

    log << "theorem suite: " << suite.trials << " instances (" << suite.draws << " drawn), " << suite.violations
        << " violations; lemma1 " << suite.lemma1_violations << "/" << suite.lemma1_trials << ", lemma2 "
        << suite.lemma2_violations << "/" << suite.lemma2_trials << "\n";
    log << "normal scan: " << rn.exception_count << " exceptions of " << rn.cells.size() << "\n";
    const bool in_band = ru.exception_count >= 30 && ru.exception_count <= 50;
    log << "uniform scan: " << ru.exception_count << " exceptions of " << ru.cells.size() << " (reference 39, band [30, 50]"
        << (in_band ? ", inside" : ", outside") << ")\n";
    if (!ok) {
        for (const auto& c : suite.counterexamples) log << "counterexample: " << nlohmann::json(c).dump() << "\n";
        log << "FAILED\n";
        return 1;
    }
    log << "all checks passed\n";
    return 0;
}

}  // namespace leq::cli

// leq-lab: data generation, training, evaluation, ablations and theory checks.
#include <iostream>

#include <CLI11.hpp>

#include "leq/cli/commands.hpp"
#include "leq/errors.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

}  // namespace

int main(int argc, char** argv)
{
    using namespace leq::cli;
    CLI::App app{"LEQ offline model-based RL lab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", build_id());

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "collect an offline dataset with a scripted controller");
    gen_cmd->add_option("--env", gen.env, "environment id")->capture_default_str();
    gen_cmd->add_option("--collector", gen.collector, "random | medium | expert | mixed")->capture_default_str();
    gen_cmd->add_option("--n", gen.n, "number of trajectories")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "output .leqd file")->required();
    gen_cmd->add_option("--normalization", gen.normalization, "auto | none | minmax_return | sparse_shift")
        ->capture_default_str();

    std::string config_path;
    auto* pre_cmd = app.add_subcommand("pretrain", "train the world model, BC policy and FQE critic");
    pre_cmd->add_option("--config", config_path, "run config JSON")->required();

    TrainOptions train_opts;
    auto* train_cmd = app.add_subcommand("train", "full pipeline: world model, pretraining, LEQ loop");
    train_cmd->add_option("--config", config_path, "run config JSON")->required();
    train_cmd->add_option("--resume", train_opts.resume, "agent checkpoint to continue from");
    train_cmd->add_option("--stop-after", train_opts.stop_after, "stop once this step is reached");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate an agent checkpoint in the true environment");
    eval_cmd->add_option("--agent", eval.agent, "agent checkpoint")->required();
    eval_cmd->add_option("--env", eval.env)->capture_default_str();
    eval_cmd->add_option("--episodes", eval.episodes)->capture_default_str();
    eval_cmd->add_option("--seed", eval.seed)->capture_default_str();

    std::string matrix_path, table_path = "ablation.csv";
    auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation matrix and write a results table");
    ablate_cmd->add_option("--matrix", matrix_path, "ablation matrix JSON")->required();
    ablate_cmd->add_option("--out", table_path, "table CSV")->capture_default_str();

    VerifyArgs verify;
    auto* verify_cmd = app.add_subcommand("verify-theory", "Monte Carlo checks and exception-region scans");
    verify_cmd->add_option("--trials", verify.trials)->capture_default_str();
    verify_cmd->add_option("--seed", verify.seed)->capture_default_str();
    verify_cmd->add_option("--out", verify.out_dir, "output directory")->capture_default_str();

    bool print_schema = false;
    auto* schema_cmd = app.add_subcommand("schema", "print the run config JSON schema");
    schema_cmd->callback([&] { print_schema = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        thread_cap();
        if (print_schema) {
            std::cout << run_config_schema().dump(2) << "\n";
        } else if (*gen_cmd) {
            cmd_gen_data(gen, std::cout);
        } else if (*pre_cmd) {
            cmd_pretrain(load_run_config(config_path), std::cout);
        } else if (*train_cmd) {
            const auto r = cmd_train(load_run_config(config_path), train_opts, std::cout);
            std::cout << r.report.dump(2) << "\n";
        } else if (*eval_cmd) {
            cmd_eval(eval, std::cout);
        } else if (*ablate_cmd) {
            cmd_ablate(load_ablation_matrix(matrix_path), table_path, std::cout);
        } else if (*verify_cmd) {
            return cmd_verify_theory(verify, std::cout);
        }
    } catch (const leq::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const leq::TrainingDivergence& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return 0;
}

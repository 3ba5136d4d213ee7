#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "leq/cli/run_config.hpp"

namespace leq::cli {

/// git-describe style id baked in at configure time ("unknown" outside a checkout).
std::string build_id();

/// Worker cap from LEQ_LAB_THREADS (default 1). Throws UsageError on a
/// malformed value. Training itself is single-threaded.
int thread_cap();

struct GenDataArgs {
    std::string env = "point_maze_u";
    std::string collector = "mixed";
    int n = 200;
    std::uint64_t seed = 0;
    std::string out;
    std::string normalization = "auto";  // auto: sparse_shift for mazes, none for dense_chain
};

void cmd_gen_data(const GenDataArgs& args, std::ostream& log);

struct EvalPoint {
    std::int64_t step = 0;
    double mean_return = 0.0;
    double success_rate = 0.0;
};

void to_json(nlohmann::json& j, const EvalPoint& p);

struct TrainOptions {
    std::string resume;          // agent checkpoint to continue from
    std::int64_t stop_after = -1;  // stop (with a checkpoint) once this step is reached
    bool quiet = false;
};

struct TrainResult {
    std::int64_t steps = 0;
    EvalPoint pretrain_eval;
    EvalPoint final_eval;
    EvalPoint best_eval;
    nlohmann::json report;
};

/// Stages as configured: world model (train or load), BC + FQE (or load an
/// agent), then the training loop with periodic evaluation. Writes
/// config.json, world_model.leqc, agent_pretrained.leqc, metrics.csv,
/// agent_last.leqc and report.json under out_dir. On divergence a snapshot
/// (diverged.leqc) and a report are written before TrainingDivergence is rethrown.
TrainResult cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& log);

/// cmd_train restricted to the world_model and pretrain stages.
TrainResult cmd_pretrain(RunConfig config, std::ostream& log);

struct EvalArgs {
    std::string agent;  // agent checkpoint
    std::string env = "point_maze_u";
    int episodes = 50;
    std::uint64_t seed = 0;
};

EvalPoint cmd_eval(const EvalArgs& args, std::ostream& log);

struct AblationCell {
    std::string name;
    nlohmann::json agent = nlohmann::json::object();  // AgentConfig overrides
};

struct AblationMatrix {
    RunConfig base;
    std::vector<std::uint64_t> seeds{0};
    std::vector<AblationCell> cells;
};

/// {"base": RunConfig, "seeds": [...], "cells": [{"name": ..., "conservatism": ..., "critic_target": ...,
/// "policy_update": ..., "agent": {...}}]}; cell fields other than name are AgentConfig overrides.
AblationMatrix load_ablation_matrix(const std::string& path);
AblationMatrix ablation_matrix_from_json(const nlohmann::json& j);

struct AblationRow {
    std::string name;
    std::string conservatism, critic_target, policy_update;
    int runs = 0;
    int completed = 0;
    double mean_return = 0.0, std_return = 0.0;
    double mean_success = 0.0, std_success = 0.0;
    std::string status;  // "ok", "diverged" or "failed"
};

/// Runs every cell for every seed (one world model per seed, shared by the
/// cells) and writes the table to out_csv. Per-cell failures are recorded.
std::vector<AblationRow> cmd_ablate(const AblationMatrix& matrix, const std::string& out_csv, std::ostream& log);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct VerifyArgs {
    std::int64_t trials = 100000;
    std::uint64_t seed = 0;
    std::string out_dir = "theory";
};

/// Monte Carlo suite plus both exception scans; returns the exit code
/// (1 when a lemma/theorem check fails or the normal scan has exceptions).
int cmd_verify_theory(const VerifyArgs& args, std::ostream& log);

}  // namespace leq::cli

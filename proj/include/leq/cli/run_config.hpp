#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "leq/agent/config.hpp"
#include "leq/model/world_model.hpp"

namespace leq::cli {

enum class Stage { world_model, pretrain, train };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// Everything a train/pretrain run needs. The world-model seed is derived
/// from `seed`, so world_model.seed is not part of the document.
struct RunConfig {
    std::string env = "point_maze_u";
    std::string dataset;          // .leqd path
    std::uint64_t seed = 0;
    std::string out_dir = "run";
    std::vector<Stage> stages{Stage::world_model, Stage::pretrain, Stage::train};
    std::string world_model_path;  // used when the world_model stage is skipped
    std::string agent_path;        // pretrained agent, used when the pretrain stage is skipped
    model::EnsembleConfig world_model;
    agent::AgentConfig agent;
    int eval_every = 5000;
    int eval_episodes = 50;
    int log_every = 100;
    int checkpoint_every = 10000;

    bool has_stage(Stage s) const;
    /// Throws UsageError naming the first bad field.
    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Strict: unknown keys (top level, "agent" or "world_model") raise UsageError.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::string& path);

/// JSON schema (draft 2020-12) describing the accepted document.
nlohmann::json run_config_schema();

}  // namespace leq::cli

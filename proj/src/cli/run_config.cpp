#include "leq/cli/run_config.hpp"

#include <algorithm>
#include <filesystem>

#include "leq/binary_io.hpp"
#include "leq/env/env.hpp"
#include "leq/errors.hpp"

namespace leq::cli {

namespace {

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& where)
{
    if (!j.is_object()) throw UsageError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw UsageError("unknown " + where + " key '" + key + "'");
    }
}

nlohmann::json world_model_json(const model::EnsembleConfig& c)
{
    nlohmann::json j = c;
    j.erase("seed");
    return j;
}

// Property schema from a default value.
nlohmann::json schema_of(const nlohmann::json& v)
{
    if (v.is_boolean()) return {{"type", "boolean"}};
    if (v.is_number_integer() || v.is_number_unsigned()) return {{"type", "integer"}};
    if (v.is_number()) return {{"type", "number"}};
    if (v.is_string()) return {{"type", "string"}};
    if (v.is_array()) return {{"type", "array"}, {"items", {{"type", "integer"}}}};
    return {{"type", "object"}};
}

nlohmann::json object_schema(const nlohmann::json& defaults)
{
    nlohmann::json props = nlohmann::json::object();
    for (const auto& [key, value] : defaults.items()) props[key] = schema_of(value);
    return {{"type", "object"}, {"additionalProperties", false}, {"properties", props}};
}

}  // namespace

std::string to_string(Stage s)
{
    switch (s) {
    case Stage::world_model: return "world_model";
    case Stage::pretrain: return "pretrain";
    case Stage::train: return "train";
    }
    return "train";
}

Stage stage_from_string(const std::string& s)
{
    if (s == "world_model") return Stage::world_model;
    if (s == "pretrain") return Stage::pretrain;
    if (s == "train") return Stage::train;
    throw UsageError("unknown stage '" + s + "'");
}

bool RunConfig::has_stage(Stage s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }

void RunConfig::validate() const
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw UsageError("run config: " + what);
    };
    const auto names = env::env_names();
    require(std::find(names.begin(), names.end(), env) != names.end(), "unknown env '" + env + "'");
    require(!dataset.empty(), "dataset path is required");
    require(!out_dir.empty(), "out_dir is required");
    require(!stages.empty(), "stages must be non-empty");
    require(has_stage(Stage::world_model) || !world_model_path.empty(),
            "world_model_path is required when the world_model stage is skipped");
    require(eval_every >= 1 && eval_episodes >= 1, "eval_every and eval_episodes must be >= 1");
    require(log_every >= 1 && checkpoint_every >= 1, "log_every and checkpoint_every must be >= 1");
    require(world_model.members >= world_model.elites && world_model.elites >= 1, "world_model needs 1 <= elites <= members");
    require(world_model.steps >= 1 && world_model.batch_size >= 1 && world_model.eval_every >= 1,
            "world_model step counts must be >= 1");
    require(world_model.holdout > 0.0 && world_model.holdout < 1.0, "world_model holdout must lie in (0, 1)");
    try {
        agent.validate();
    } catch (const PreconditionError& e) {
        throw UsageError(e.what());
    }
}

void to_json(nlohmann::json& j, const RunConfig& c)
{
    std::vector<std::string> stages;
    for (Stage s : c.stages) stages.push_back(to_string(s));
    j = {{"env", c.env},
         {"dataset", c.dataset},
         {"seed", c.seed},
         {"out_dir", c.out_dir},
         {"stages", stages},
         {"world_model_path", c.world_model_path},
         {"agent_path", c.agent_path},
         {"world_model", world_model_json(c.world_model)},
         {"agent", c.agent},
         {"eval_every", c.eval_every},
         {"eval_episodes", c.eval_episodes},
         {"log_every", c.log_every},
         {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, RunConfig& c)
{
    nlohmann::json known;
    to_json(known, RunConfig{});
    reject_unknown(j, known, "run config");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        get("env", c.env);
        get("dataset", c.dataset);
        get("seed", c.seed);
        get("out_dir", c.out_dir);
        get("world_model_path", c.world_model_path);
        get("agent_path", c.agent_path);
        get("eval_every", c.eval_every);
        get("eval_episodes", c.eval_episodes);
        get("log_every", c.log_every);
        get("checkpoint_every", c.checkpoint_every);
        if (j.contains("stages")) {
            c.stages.clear();
            for (const auto& s : j.at("stages")) c.stages.push_back(stage_from_string(s.get<std::string>()));
        }
        if (j.contains("world_model")) {
            const auto& wm = j.at("world_model");
            reject_unknown(wm, known.at("world_model"), "world_model");
            nlohmann::json merged = world_model_json(c.world_model);
            merged.update(wm);
            merged["seed"] = 0;
            model::from_json(merged, c.world_model);
        }
        if (j.contains("agent")) from_json(j.at("agent"), c.agent);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("run config: ") + e.what());
    } catch (const PreconditionError& e) {
        throw UsageError(std::string("run config: ") + e.what());
    }
}

RunConfig load_run_config(const std::string& path)
{
    if (!std::filesystem::exists(path)) throw UsageError("run config " + path + " does not exist");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError("run config " + path + ": " + e.what());
    }
    RunConfig c;
    from_json(j, c);
    c.validate();
    return c;
}

nlohmann::json run_config_schema()
{
    nlohmann::json defaults;
    to_json(defaults, RunConfig{});
    nlohmann::json s = object_schema(defaults);
    s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
    s["title"] = "leq-lab run config";
    s["properties"]["world_model"] = object_schema(defaults.at("world_model"));
    s["properties"]["world_model"]["properties"]["hidden"] = {{"type", "array"}, {"items", {{"type", "integer"}}}};
    s["properties"]["world_model"]["properties"]["activation"]["enum"] = {"relu", "tanh", "elu"};
    s["properties"]["agent"] = object_schema(defaults.at("agent"));
    auto& ap = s["properties"]["agent"]["properties"];
    ap["conservatism"]["enum"] = {"lower_expectile", "mobile_lcb", "none"};
    ap["critic_target"]["enum"] = {"lambda", "one_step", "h_step"};
    ap["policy_update"]["enum"] = {"lambda_expectile", "q_value", "awr"};
    s["properties"]["stages"] = {{"type", "array"},
                                 {"items", {{"enum", {"world_model", "pretrain", "train"}}}}};
    s["properties"]["env"]["enum"] = env::env_names();
    return s;
}

}  // namespace leq::cli

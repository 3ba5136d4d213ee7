#include "leq/agent/config.hpp"

#include "leq/errors.hpp"

namespace leq::agent {

std::string to_string(Conservatism c)
{
    switch (c) {
    case Conservatism::lower_expectile: return "lower_expectile";
    case Conservatism::mobile_lcb: return "mobile_lcb";
    case Conservatism::none: return "none";
    }
    return "none";
}

std::string to_string(CriticTarget c)
{
    switch (c) {
    case CriticTarget::lambda: return "lambda";
    case CriticTarget::one_step: return "one_step";
    case CriticTarget::h_step: return "h_step";
    }
    return "lambda";
}

std::string to_string(PolicyUpdate p)
{
    switch (p) {
    case PolicyUpdate::lambda_expectile: return "lambda_expectile";
    case PolicyUpdate::q_value: return "q_value";
    case PolicyUpdate::awr: return "awr";
    }
    return "lambda_expectile";
}

Conservatism conservatism_from_string(const std::string& s)
{
    if (s == "lower_expectile") return Conservatism::lower_expectile;
    if (s == "mobile_lcb") return Conservatism::mobile_lcb;
    if (s == "none") return Conservatism::none;
    throw UsageError("unknown conservatism '" + s + "'");
}

CriticTarget critic_target_from_string(const std::string& s)
{
    if (s == "lambda") return CriticTarget::lambda;
    if (s == "one_step") return CriticTarget::one_step;
    if (s == "h_step") return CriticTarget::h_step;
    throw UsageError("unknown critic_target '" + s + "'");
}

PolicyUpdate policy_update_from_string(const std::string& s)
{
    if (s == "lambda_expectile") return PolicyUpdate::lambda_expectile;
    if (s == "q_value") return PolicyUpdate::q_value;
    if (s == "awr") return PolicyUpdate::awr;
    throw UsageError("unknown policy_update '" + s + "'");
}

AgentConfig AgentConfig::paper_defaults()
{
    AgentConfig c;
    c.expand_every = 5000;
    c.expand_count = 50000;
    c.iterations = 1000000;
    return c;
}

double AgentConfig::effective_tau() const { return conservatism == Conservatism::lower_expectile ? tau : 0.5; }

void AgentConfig::validate() const
{
    auto require = [](bool ok, const char* what) {
        if (!ok) throw PreconditionError(std::string("agent config: ") + what);
    };
    ExpectileParam{tau};
    require(lambda >= 0.0 && lambda < 1.0, "lambda must lie in [0, 1)");
    require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
    require(horizon >= 1, "horizon must be >= 1");
    require(expand_horizon >= 1, "expand_horizon must be >= 1");
    require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
    require(omega_ema >= 0.0, "omega_ema must be >= 0");
    require(ema_decay > 0.0 && ema_decay < 1.0, "ema_decay must lie in (0, 1)");
    require(sigma_exp >= 0.0, "sigma_exp must be >= 0");
    require(lr_actor >= 0.0 && lr_critic >= 0.0 && lr_pretrain >= 0.0, "learning rates must be >= 0");
    require(batch_env >= 1 && batch_model >= 1, "batch sizes must be >= 1");
    require(expand_every >= 1 && expand_count >= 1 && iterations >= 0, "expansion/iteration counts out of range");
    require(!hidden.empty(), "hidden must be non-empty");
    require(lcb_coef >= 0.0, "lcb_coef must be >= 0");
    require(awr_alpha > 0.0, "awr_alpha must be > 0");
    require(bc_steps >= 0 && fqe_steps >= 0, "pretraining steps must be >= 0");
}

void to_json(nlohmann::json& j, const AgentConfig& c)
{
    j = {
        {"tau", c.tau},
        {"lambda", c.lambda},
        {"gamma", c.gamma},
        {"horizon", c.horizon},
        {"expand_horizon", c.expand_horizon},
        {"beta", c.beta},
        {"omega_ema", c.omega_ema},
        {"ema_decay", c.ema_decay},
        {"sigma_exp", c.sigma_exp},
        {"lr_actor", c.lr_actor},
        {"lr_critic", c.lr_critic},
        {"batch_env", c.batch_env},
        {"batch_model", c.batch_model},
        {"expand_every", c.expand_every},
        {"expand_count", c.expand_count},
        {"iterations", c.iterations},
        {"hidden", c.hidden},
        {"conservatism", to_string(c.conservatism)},
        {"lcb_coef", c.lcb_coef},
        {"critic_target", to_string(c.critic_target)},
        {"policy_update", to_string(c.policy_update)},
        {"awr_alpha", c.awr_alpha},
        {"use_expansion", c.use_expansion},
        {"pretrain", c.pretrain},
        {"bc_steps", c.bc_steps},
        {"fqe_steps", c.fqe_steps},
        {"lr_pretrain", c.lr_pretrain},
    };
}

void from_json(const nlohmann::json& j, AgentConfig& c)
{
    if (!j.is_object()) throw UsageError("agent config must be a JSON object");
    nlohmann::json known;
    to_json(known, AgentConfig{});
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw UsageError("unknown agent config key '" + key + "'");
    }
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        get("tau", c.tau);
        get("lambda", c.lambda);
        get("gamma", c.gamma);
        get("horizon", c.horizon);
        get("expand_horizon", c.expand_horizon);
        get("beta", c.beta);
        get("omega_ema", c.omega_ema);
        get("ema_decay", c.ema_decay);
        get("sigma_exp", c.sigma_exp);
        get("lr_actor", c.lr_actor);
        get("lr_critic", c.lr_critic);
        get("batch_env", c.batch_env);
        get("batch_model", c.batch_model);
        get("expand_every", c.expand_every);
        get("expand_count", c.expand_count);
        get("iterations", c.iterations);
        get("hidden", c.hidden);
        get("lcb_coef", c.lcb_coef);
        get("awr_alpha", c.awr_alpha);
        get("use_expansion", c.use_expansion);
        get("pretrain", c.pretrain);
        get("bc_steps", c.bc_steps);
        get("fqe_steps", c.fqe_steps);
        get("lr_pretrain", c.lr_pretrain);
        if (j.contains("conservatism")) c.conservatism = conservatism_from_string(j.at("conservatism").get<std::string>());
        if (j.contains("critic_target")) c.critic_target = critic_target_from_string(j.at("critic_target").get<std::string>());
        if (j.contains("policy_update")) c.policy_update = policy_update_from_string(j.at("policy_update").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("agent config: ") + e.what());
    }
}

}  // namespace leq::agent

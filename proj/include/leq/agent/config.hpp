#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "leq/expectile.hpp"
#include "leq/model/world_model.hpp"

namespace leq::agent {

enum class Conservatism { lower_expectile, mobile_lcb, none };
enum class CriticTarget { lambda, one_step, h_step };
enum class PolicyUpdate { lambda_expectile, q_value, awr };

std::string to_string(Conservatism c);
std::string to_string(CriticTarget c);
std::string to_string(PolicyUpdate p);
Conservatism conservatism_from_string(const std::string& s);
CriticTarget critic_target_from_string(const std::string& s);
PolicyUpdate policy_update_from_string(const std::string& s);

struct AgentConfig {
    double tau = 0.1;
    double lambda = 0.95;
    double gamma = 0.997;
    int horizon = 10;          // H
    int expand_horizon = 5;    // R
    double beta = 0.25;
    double omega_ema = 1.0;
    double ema_decay = 0.995;
    double sigma_exp = 1.0;
    double lr_actor = 3e-5;
    double lr_critic = 1e-4;
    int batch_env = 256;
    int batch_model = 256;
    int expand_every = 1000;    // T_expand
    int expand_count = 5000;    // N_expand
    int iterations = 50000;     // N_iter
    std::vector<int> hidden{64, 64};

    Conservatism conservatism = Conservatism::lower_expectile;
    double lcb_coef = 1.0;      // c for mobile_lcb
    CriticTarget critic_target = CriticTarget::lambda;
    PolicyUpdate policy_update = PolicyUpdate::lambda_expectile;
    double awr_alpha = 1.0;
    bool use_expansion = true;
    bool pretrain = true;

    // Pretraining (BC for the actor, FQE for the critic).
    int bc_steps = 5000;
    int fqe_steps = 5000;
    double lr_pretrain = 1e-3;

    /// Full-size values from the original hyperparameter table.
    static AgentConfig paper_defaults();

    /// The expectile actually used by the critic and actor losses: tau for
    /// lower_expectile, 0.5 otherwise.
    double effective_tau() const;

    /// Throws PreconditionError naming the first out-of-range field.
    void validate() const;

    bool operator==(const AgentConfig&) const = default;
};

void to_json(nlohmann::json& j, const AgentConfig& c);
/// Strict: unknown keys are rejected with UsageError; missing keys keep defaults.
void from_json(const nlohmann::json& j, AgentConfig& c);

}  // namespace leq::agent

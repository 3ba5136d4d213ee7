#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "leq/expectile.hpp"

namespace leq::theory {

inline constexpr double kDefaultTolerance = 1e-9;

/// tau-expectile extended to tau = 0, where it is the essential infimum.
double expectile_or_infimum(const ScalarDistribution& dist, double tau);

/// |y_new - y| - |y_hat - y|, with infinite y or y_hat resolved by their
/// limits: equal infinities give 0, an infinite y against finite estimates
/// gives the signed gap of the estimates, an infinite y_hat gives -inf.
double error_difference(double y, double y_hat, double y_new);

/// One filtered-mean step from an optimistic start y_hat >= E^tau[X] does
/// not move away from the expectile. Throws PreconditionError if y_hat is
/// below the expectile (beyond tolerance).
bool lemma1_check(const ScalarDistribution& dist, double tau, double y_hat, double tolerance = kDefaultTolerance);

/// p(X < y_hat) >= (p(X <= Y) - tau / (1 - 2 tau)) / 2 with Y = E^tau[X].
/// The right side is -inf for tau >= 0.5, so the condition always holds there.
bool theorem1_condition(const ScalarDistribution& dist, double tau, double y_hat);

/// Pessimistic start y_hat <= Y satisfying theorem1_condition: the step does
/// not increase the error. Throws PreconditionError outside that region.
bool lemma2_check(const ScalarDistribution& dist, double tau, double y_hat, double tolerance = kDefaultTolerance);

struct Counterexample {
    std::string check;  // "theorem1", "lemma1" or "lemma2"
    Empirical dist;
    double tau = 0.0;
    double y_hat = 0.0;
    double y = 0.0;
    double y_new = 0.0;
    double error_diff = 0.0;
};

struct TheoremSuiteReport {
    std::int64_t trials = 0;           // instances satisfying the condition
    std::int64_t draws = 0;            // instances drawn in total
    std::int64_t violations = 0;
    std::int64_t lemma1_trials = 0;
    std::int64_t lemma1_violations = 0;
    std::int64_t lemma2_trials = 0;
    std::int64_t lemma2_violations = 0;
    double max_error_diff = -std::numeric_limits<double>::infinity();  // over condition-satisfying instances
    std::vector<Counterexample> counterexamples;  // first few only

    bool passed() const { return violations == 0 && lemma1_violations == 0 && lemma2_violations == 0; }
};

/// Draws random empirical distributions (5 to 50 atoms, scales from 1e-2 to
/// 1e2, some with repeated atoms) with random tau in (0, 0.5] and y_hat,
/// until n_trials draws satisfy theorem1_condition. Lemma 1 and Lemma 2
/// are checked on the same draws where they apply.
TheoremSuiteReport monte_carlo_theorem_suite(std::int64_t n_trials, std::uint64_t seed,
                                             double tolerance = kDefaultTolerance);

void to_json(nlohmann::json& j, const Counterexample& c);
void to_json(nlohmann::json& j, const TheoremSuiteReport& r);

enum class GridStart {
    zero,   // 0, 0.0025, ..., 0.4975 with E^0 the essential infimum
    shift,  // midpoints 0.00125, ..., 0.49875
};

struct ScanConfig {
    ScalarDistribution distribution = Normal{};
    GridStart start = GridStart::zero;
    double step = 0.0025;
    int points = 200;
    double tolerance = 1e-12;

    std::vector<double> grid() const;
};

struct ScanCell {
    double tau = 0.0;
    double tau_hat = 0.0;
    double y = 0.0;
    double y_hat = 0.0;
    double y_new = 0.0;
    double error_diff = 0.0;
    bool exception = false;
};

struct ScanResult {
    std::vector<ScanCell> cells;  // row-major over (tau, tau_hat)
    int points = 0;
    int exception_count = 0;
    std::vector<std::pair<int, int>> exceptions;  // (tau index, tau_hat index)
};

/// Evaluates every (tau, tau_hat) cell with closed-form moments.
ScanResult exception_region_scan(const ScanConfig& config);

/// Rows (tau, tau_hat, Y, Y_hat, Y_new, error_diff, exception_flag).
void write_scan_csv(const ScanResult& result, const std::string& path);
std::string scan_csv(const ScanResult& result);
nlohmann::json scan_summary(const ScanResult& result);

std::string distribution_name(const ScalarDistribution& dist);

}  // namespace leq::theory

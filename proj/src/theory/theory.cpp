#include "leq/theory/theory.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "leq/binary_io.hpp"
#include "leq/errors.hpp"
#include "leq/rng.hpp"

namespace leq::theory {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kMaxCounterexamples = 10;

double step_error_diff(const ScalarDistribution& dist, double tau, double y_hat, double& y, double& y_new)
{
    y = expectile_of(dist, ExpectileParam{tau});
    y_new = filtered_mean_estimate(dist, y_hat, tau);
    return std::abs(y_new - y) - std::abs(y_hat - y);
}

Empirical random_distribution(Rng& rng)
{
    const int k = 5 + static_cast<int>(rng.below(46));
    const double scale = std::pow(10.0, rng.uniform(-2.0, 2.0));
    const double loc = rng.normal(0.0, 2.0 * scale);
    const auto kind = rng.below(3);
    std::vector<double> xs(static_cast<std::size_t>(k));
    for (double& x : xs) {
        switch (kind) {
        case 0: x = loc + scale * rng.normal(); break;
        case 1: x = loc + scale * rng.uniform(-1.0, 1.0); break;
        default: x = loc + scale * std::round(rng.uniform(0.0, 5.0)); break;  // repeated atoms
        }
    }
    if (rng.below(2) == 0) return make_empirical(xs);
    std::vector<double> w(xs.size());
    double total = 0.0;
    for (double& v : w) total += (v = rng.uniform(0.05, 1.0));
    for (double& v : w) v /= total;
    return make_empirical(xs, w);
}

double random_y_hat(const Empirical& e, double y, Rng& rng)
{
    const auto [lo, hi] = std::minmax_element(e.samples.begin(), e.samples.end());
    const double spread = std::max(*hi - *lo, 1e-3);
    switch (rng.below(4)) {
    case 0: return rng.uniform(*lo - 0.5 * spread, *hi + 0.5 * spread);
    case 1: return e.samples[rng.below(e.samples.size())];
    case 2: return y + rng.normal(0.0, 0.05 * spread);
    default: return y;
    }
}

}  // namespace

double expectile_or_infimum(const ScalarDistribution& dist, double tau)
{
    if (tau == 0.0) return essential_infimum(dist);
    return expectile_of(dist, ExpectileParam{tau});
}

double error_difference(double y, double y_hat, double y_new)
{
    if (std::isinf(y)) {
        if (y_hat == y) return 0.0;
        // |y_new - y| - |y_hat - y| -> sign * (y_new - y_hat) as y -> +-inf.
        return y < 0 ? y_new - y_hat : y_hat - y_new;
    }
    if (std::isinf(y_hat)) return -kInf;
    return std::abs(y_new - y) - std::abs(y_hat - y);
}

bool lemma1_check(const ScalarDistribution& dist, double tau, double y_hat, double tolerance)
{
    double y = 0.0, y_new = 0.0;
    const double diff = step_error_diff(dist, tau, y_hat, y, y_new);
    if (y_hat < y - tolerance) throw PreconditionError("lemma1_check: y_hat is below the expectile");
    return diff <= tolerance;
}

bool theorem1_condition(const ScalarDistribution& dist, double tau, double y_hat)
{
    if (tau >= 0.5) return true;
    const double y = expectile_of(dist, ExpectileParam{tau});
    return mass_below(dist, y_hat) >= 0.5 * (cdf(dist, y) - tau / (1.0 - 2.0 * tau));
}

bool lemma2_check(const ScalarDistribution& dist, double tau, double y_hat, double tolerance)
{
    double y = 0.0, y_new = 0.0;
    const double diff = step_error_diff(dist, tau, y_hat, y, y_new);
    if (y_hat > y + tolerance || !theorem1_condition(dist, tau, y_hat)) {
        throw PreconditionError("lemma2_check: y_hat must be pessimistic and satisfy the condition");
    }
    return diff <= tolerance;
}

TheoremSuiteReport monte_carlo_theorem_suite(std::int64_t n_trials, std::uint64_t seed, double tolerance)
{
    if (n_trials < 1) throw PreconditionError("monte_carlo_theorem_suite: n_trials must be >= 1");
    TheoremSuiteReport rep;
    Rng rng(mix_seed(seed, "theorem_suite"));
    auto record = [&](const char* check, const Empirical& e, double tau, double y_hat, double y, double y_new,
                      double diff) {
        if (rep.counterexamples.size() < kMaxCounterexamples) {
            rep.counterexamples.push_back({check, e, tau, y_hat, y, y_new, diff});
        }
    };
    while (rep.trials < n_trials) {
        ++rep.draws;
        const Empirical e = random_distribution(rng);
        const double tau = rng.below(20) == 0 ? 0.5 : rng.uniform(0.005, 0.5);
        const double y = expectile_of(e, ExpectileParam{tau});
        const double y_hat = random_y_hat(e, y, rng);
        const double y_new = filtered_mean_estimate(e, y_hat, tau);
        const double diff = std::abs(y_new - y) - std::abs(y_hat - y);
        const bool cond = theorem1_condition(e, tau, y_hat);
        const bool bad = diff > tolerance;
        if (cond) {
            ++rep.trials;
            rep.max_error_diff = std::max(rep.max_error_diff, diff);
            if (bad) {
                ++rep.violations;
                record("theorem1", e, tau, y_hat, y, y_new, diff);
            }
        }
        if (y_hat >= y) {
            ++rep.lemma1_trials;
            if (bad) {
                ++rep.lemma1_violations;
                record("lemma1", e, tau, y_hat, y, y_new, diff);
            }
        }
        if (y_hat <= y && cond) {
            ++rep.lemma2_trials;
            if (bad) {
                ++rep.lemma2_violations;
                record("lemma2", e, tau, y_hat, y, y_new, diff);
            }
        }
    }
    return rep;
}

void to_json(nlohmann::json& j, const Counterexample& c)
{
    j = {{"check", c.check},   {"samples", c.dist.samples}, {"weights", c.dist.weights},
         {"tau", c.tau},       {"y_hat", c.y_hat},          {"y", c.y},
         {"y_new", c.y_new},   {"error_diff", c.error_diff}};
}

void to_json(nlohmann::json& j, const TheoremSuiteReport& r)
{
    j = {{"trials", r.trials},
         {"draws", r.draws},
         {"violations", r.violations},
         {"lemma1_trials", r.lemma1_trials},
         {"lemma1_violations", r.lemma1_violations},
         {"lemma2_trials", r.lemma2_trials},
         {"lemma2_violations", r.lemma2_violations},
         {"max_error_diff", r.max_error_diff},
         {"passed", r.passed()},
         {"counterexamples", r.counterexamples}};
}

std::vector<double> ScanConfig::grid() const
{
    if (!(step > 0.0) || points < 1) throw PreconditionError("ScanConfig: step must be > 0 and points >= 1");
    std::vector<double> g(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
        const double offset = start == GridStart::zero ? 0.0 : 0.5;
        g[static_cast<std::size_t>(i)] = (i + offset) * step;
    }
    if (g.back() >= 0.5 + 1e-12) throw PreconditionError("ScanConfig: grid must stay below 0.5");
    return g;
}

ScanResult exception_region_scan(const ScanConfig& config)
{
    validate(config.distribution);
    const auto grid = config.grid();
    const auto n = grid.size();
    std::vector<double> ex(n);
    for (std::size_t i = 0; i < n; ++i) ex[i] = expectile_or_infimum(config.distribution, grid[i]);

    ScanResult res;
    res.points = static_cast<int>(n);
    res.cells.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            ScanCell c;
            c.tau = grid[i];
            c.tau_hat = grid[j];
            c.y = ex[i];
            c.y_hat = ex[j];
            c.y_new = filtered_mean_estimate(config.distribution, c.y_hat, c.tau);
            c.error_diff = error_difference(c.y, c.y_hat, c.y_new);
            c.exception = c.error_diff > config.tolerance;
            if (c.exception) {
                ++res.exception_count;
                res.exceptions.emplace_back(static_cast<int>(i), static_cast<int>(j));
            }
            res.cells.push_back(c);
        }
    }
    return res;
}

std::string scan_csv(const ScanResult& result)
{
    std::ostringstream os;
    os << std::setprecision(17);
    os << "tau,tau_hat,Y,Y_hat,Y_new,error_diff,exception_flag\n";
    for (const auto& c : result.cells) {
        os << c.tau << ',' << c.tau_hat << ',' << c.y << ',' << c.y_hat << ',' << c.y_new << ',' << c.error_diff
           << ',' << (c.exception ? 1 : 0) << '\n';
    }
    return os.str();
}

void write_scan_csv(const ScanResult& result, const std::string& path) { io::write_file(path, scan_csv(result)); }

nlohmann::json scan_summary(const ScanResult& result)
{
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& [i, j] : result.exceptions) {
        const auto& c = result.cells[static_cast<std::size_t>(i * result.points + j)];
        ex.push_back({{"tau", c.tau}, {"tau_hat", c.tau_hat}, {"error_diff", c.error_diff}});
    }
    double worst = -kInf;
    for (const auto& c : result.cells) worst = std::max(worst, c.error_diff);
    return {{"cells", result.cells.size()},
            {"grid_points", result.points},
            {"exception_count", result.exception_count},
            {"max_error_diff", worst},
            {"exceptions", ex}};
}

std::string distribution_name(const ScalarDistribution& dist)
{
    std::ostringstream os;
    if (const auto* n = std::get_if<Normal>(&dist)) {
        os << "normal(" << n->mu << "," << n->sigma << ")";
    } else if (const auto* u = std::get_if<Uniform>(&dist)) {
        os << "uniform(" << u->lo << "," << u->hi << ")";
    } else if (const auto* t = std::get_if<TwoPoint>(&dist)) {
        os << "two_point(" << t->x0 << "," << t->x1 << "," << t->p << ")";
    } else {
        os << "empirical(" << std::get<Empirical>(dist).samples.size() << ")";
    }
    return os.str();
}

}  // namespace leq::theory

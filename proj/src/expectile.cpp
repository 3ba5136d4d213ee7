#include "leq/expectile.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "leq/errors.hpp"

namespace leq {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};

constexpr int kMaxBisection = 2000;

// First-order condition of E[L2^tau(y - X)]; nondecreasing in y, zero at the expectile.
double first_order_condition(const ScalarDistribution& dist, double y, double tau)
{
    const double p = mass_below(dist, y);
    const double m = partial_mean_below(dist, y);
    const double mu = mean(dist);
    return (1.0 - tau) * (y * p - m) + tau * (y * (1.0 - p) - (mu - m));
}

std::pair<double, double> bracket(const ScalarDistribution& dist)
{
    return std::visit(
        Overloaded{
            [](const Empirical& e) {
                const auto [lo, hi] = std::minmax_element(e.samples.begin(), e.samples.end());
                return std::pair{*lo, *hi};
            },
            [](const Normal& n) { return std::pair{n.mu - 10.0 * n.sigma, n.mu + 10.0 * n.sigma}; },
            [](const Uniform& u) { return std::pair{u.lo, u.hi}; },
            [](const TwoPoint& t) { return std::pair{std::min(t.x0, t.x1), std::max(t.x0, t.x1)}; },
        },
        dist);
}

}  // namespace

ExpectileParam::ExpectileParam(double tau) : tau_(tau)
{
    if (!(tau > 0.0 && tau <= 1.0)) {
        throw PreconditionError("expectile tau must lie in (0, 1], got " + std::to_string(tau));
    }
}

void validate(const ScalarDistribution& dist)
{
    std::visit(
        Overloaded{
            [](const Empirical& e) {
                if (e.samples.empty()) throw PreconditionError("empirical distribution has no samples");
                if (e.samples.size() != e.weights.size()) {
                    throw PreconditionError("empirical samples and weights differ in length");
                }
                double total = 0.0;
                for (std::size_t i = 0; i < e.samples.size(); ++i) {
                    if (!std::isfinite(e.samples[i])) throw PreconditionError("non-finite sample");
                    if (!(e.weights[i] >= 0.0)) throw PreconditionError("negative sample weight");
                    total += e.weights[i];
                }
                if (std::abs(total - 1.0) > 1e-12) throw PreconditionError("empirical weights must sum to 1");
            },
            [](const Normal& n) {
                if (!std::isfinite(n.mu) || !(n.sigma > 0.0) || !std::isfinite(n.sigma)) {
                    throw PreconditionError("normal requires finite mu and sigma > 0");
                }
            },
            [](const Uniform& u) {
                if (!(u.lo < u.hi) || !std::isfinite(u.lo) || !std::isfinite(u.hi)) {
                    throw PreconditionError("uniform requires finite lo < hi");
                }
            },
            [](const TwoPoint& t) {
                if (!(t.p > 0.0 && t.p < 1.0) || !std::isfinite(t.x0) || !std::isfinite(t.x1)) {
                    throw PreconditionError("two-point requires finite atoms and p in (0, 1)");
                }
            },
        },
        dist);
}

Empirical make_empirical(std::span<const double> samples)
{
    std::vector<double> weights(samples.size(), samples.empty() ? 0.0 : 1.0 / static_cast<double>(samples.size()));
    return make_empirical(samples, weights);
}

Empirical make_empirical(std::span<const double> samples, std::span<const double> weights)
{
    Empirical e{{samples.begin(), samples.end()}, {weights.begin(), weights.end()}};
    // Renormalize away accumulated rounding so the sum-to-one invariant is tight.
    const double total = std::accumulate(e.weights.begin(), e.weights.end(), 0.0);
    if (total > 0.0) {
        for (double& w : e.weights) w /= total;
    }
    validate(e);
    return e;
}

double standard_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double mean(const ScalarDistribution& dist)
{
    return std::visit(
        Overloaded{
            [](const Empirical& e) {
                double m = 0.0;
                for (std::size_t i = 0; i < e.samples.size(); ++i) m += e.weights[i] * e.samples[i];
                return m;
            },
            [](const Normal& n) { return n.mu; },
            [](const Uniform& u) { return 0.5 * (u.lo + u.hi); },
            [](const TwoPoint& t) { return (1.0 - t.p) * t.x0 + t.p * t.x1; },
        },
        dist);
}

double mass_below(const ScalarDistribution& dist, double y)
{
    return std::visit(
        Overloaded{
            [y](const Empirical& e) {
                double p = 0.0;
                for (std::size_t i = 0; i < e.samples.size(); ++i) {
                    if (e.samples[i] < y) p += e.weights[i];
                }
                return p;
            },
            [y](const Normal& n) { return standard_normal_cdf((y - n.mu) / n.sigma); },
            [y](const Uniform& u) { return std::clamp((y - u.lo) / (u.hi - u.lo), 0.0, 1.0); },
            [y](const TwoPoint& t) { return (t.x0 < y ? 1.0 - t.p : 0.0) + (t.x1 < y ? t.p : 0.0); },
        },
        dist);
}

double cdf(const ScalarDistribution& dist, double y)
{
    return std::visit(
        Overloaded{
            [y](const Empirical& e) {
                double p = 0.0;
                for (std::size_t i = 0; i < e.samples.size(); ++i) {
                    if (e.samples[i] <= y) p += e.weights[i];
                }
                return p;
            },
            [y](const TwoPoint& t) { return (t.x0 <= y ? 1.0 - t.p : 0.0) + (t.x1 <= y ? t.p : 0.0); },
            [&dist, y](const auto&) { return mass_below(dist, y); },
        },
        dist);
}

double partial_mean_below(const ScalarDistribution& dist, double y)
{
    return std::visit(
        Overloaded{
            [y](const Empirical& e) {
                double m = 0.0;
                for (std::size_t i = 0; i < e.samples.size(); ++i) {
                    if (e.samples[i] < y) m += e.weights[i] * e.samples[i];
                }
                return m;
            },
            [y](const Normal& n) {
                if (y == -std::numeric_limits<double>::infinity()) return 0.0;
                const double z = (y - n.mu) / n.sigma;
                return n.mu * standard_normal_cdf(z) - n.sigma * standard_normal_pdf(z);
            },
            [y](const Uniform& u) {
                const double top = std::clamp(y, u.lo, u.hi);
                const double p = (top - u.lo) / (u.hi - u.lo);
                return p * 0.5 * (u.lo + top);
            },
            [y](const TwoPoint& t) { return (t.x0 < y ? (1.0 - t.p) * t.x0 : 0.0) + (t.x1 < y ? t.p * t.x1 : 0.0); },
        },
        dist);
}

double essential_infimum(const ScalarDistribution& dist)
{
    return std::visit(
        Overloaded{
            [](const Empirical& e) {
                double lo = std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < e.samples.size(); ++i) {
                    if (e.weights[i] > 0.0) lo = std::min(lo, e.samples[i]);
                }
                return lo;
            },
            [](const Normal&) { return -std::numeric_limits<double>::infinity(); },
            [](const Uniform& u) { return u.lo; },
            [](const TwoPoint& t) { return std::min(t.x0, t.x1); },
        },
        dist);
}

double expectile_weight(double u, ExpectileParam tau) { return std::abs(tau.value() - (u > 0.0 ? 1.0 : 0.0)); }

double expectile_loss(double u, ExpectileParam tau) { return expectile_weight(u, tau) * u * u; }

double expectile_loss_grad(double u, ExpectileParam tau) { return 2.0 * expectile_weight(u, tau) * u; }

double expectile_bisect(const ScalarDistribution& dist, ExpectileParam tau)
{
    validate(dist);
    auto [lo, hi] = bracket(dist);
    const double t = tau.value();
    // Widen until the bracket straddles the root (only needed for extreme tau on unbounded support).
    for (int i = 0; i < 64 && first_order_condition(dist, lo, t) > 0.0; ++i) lo -= (hi - lo);
    for (int i = 0; i < 64 && first_order_condition(dist, hi, t) < 0.0; ++i) hi += (hi - lo);
    if (lo == hi) return lo;

    for (int iter = 0; iter < kMaxBisection; ++iter) {
        const double mid = lo + 0.5 * (hi - lo);
        if (mid <= lo || mid >= hi) return mid;
        if (first_order_condition(dist, mid, t) > 0.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if (hi - lo > 1e-10) throw SolverFailure("expectile bisection did not converge");
    return lo + 0.5 * (hi - lo);
}

double expectile_of(const ScalarDistribution& dist, ExpectileParam tau)
{
    validate(dist);
    const double t = tau.value();
    if (const auto* u = std::get_if<Uniform>(&dist)) {
        const double a = std::sqrt(t);
        const double b = std::sqrt(1.0 - t);
        return u->lo + (u->hi - u->lo) * a / (a + b);
    }
    if (const auto* tp = std::get_if<TwoPoint>(&dist)) {
        // Root of (1 - tau) (1 - p) (y - x0) + tau p (y - x1) on [x0, x1] when x0 <= x1.
        double lo_x = tp->x0, hi_x = tp->x1, p_hi = tp->p;
        if (lo_x > hi_x) {
            std::swap(lo_x, hi_x);
            p_hi = 1.0 - p_hi;
        }
        const double w_lo = (1.0 - t) * (1.0 - p_hi);
        const double w_hi = t * p_hi;
        return (w_lo * lo_x + w_hi * hi_x) / (w_lo + w_hi);
    }
    return expectile_bisect(dist, tau);
}

double filtered_mean_estimate(const ScalarDistribution& dist, double y_hat, double tau)
{
    if (!(tau >= 0.0 && tau <= 1.0)) throw PreconditionError("filtered_mean_estimate: tau outside [0, 1]");
    const double p = mass_below(dist, y_hat);
    const double m = partial_mean_below(dist, y_hat);
    const double mu = mean(dist);
    // Below y_hat the weight is 1 - tau, at or above it is tau.
    const double num = (1.0 - tau) * m + tau * (mu - m);
    const double den = (1.0 - tau) * p + tau * (1.0 - p);
    if (den <= 0.0) return y_hat;
    return num / den;
}

}  // namespace leq

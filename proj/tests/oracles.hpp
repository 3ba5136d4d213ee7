#pragma once

// Test-only reference computations. Deliberately naive and independent of
// the library code paths they check.

#include <cmath>
#include <limits>
#include <vector>

#include "leq/expectile.hpp"
#include "leq/rng.hpp"

namespace oracle {

/// Mixed-scale random empirical distribution with random weights.
inline leq::Empirical random_empirical(leq::Rng& rng, int min_n, int max_n)
{
    const int n = min_n + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_n - min_n + 1)));
    const double scale = std::pow(10.0, rng.uniform(-2.0, 2.0));
    const double shift = rng.uniform(-5.0, 5.0) * scale;
    const bool skewed = rng.uniform() < 0.5;
    std::vector<double> xs(n), ws(n);
    for (int i = 0; i < n; ++i) {
        xs[i] = shift + scale * (skewed ? -std::log(1.0 - rng.uniform()) : rng.normal());
        ws[i] = rng.uniform() < 0.5 ? 1.0 : rng.uniform(0.05, 1.0);
    }
    return leq::make_empirical(xs, ws);
}

inline double asymmetric_risk(const leq::Empirical& e, double y, double tau)
{
    double r = 0.0;
    for (std::size_t i = 0; i < e.samples.size(); ++i) {
        const double u = y - e.samples[i];
        r += e.weights[i] * (u > 0.0 ? 1.0 - tau : tau) * u * u;
    }
    return r;
}

/// argmin over a grid of the given step covering the sample range.
///
/// The risk is convex in y, so a coarse pass over the range followed by a
/// fine pass of the requested step around the coarse winner finds the same
/// grid point as an exhaustive fine scan.
inline double grid_argmin_empirical(const leq::Empirical& e, double tau, double step)
{
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double x : e.samples) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    auto scan = [&](double a, double b, double h) {
        double best = a, best_risk = asymmetric_risk(e, a, tau);
        const long n = static_cast<long>(std::ceil((b - a) / h));
        for (long k = 1; k <= n; ++k) {
            const double y = a + static_cast<double>(k) * h;
            const double r = asymmetric_risk(e, y, tau);
            if (r < best_risk) {
                best_risk = r;
                best = y;
            }
        }
        return best;
    };
    const double coarse = std::max(step, (hi - lo) / 2000.0);
    const double c = scan(lo, hi, coarse);
    return scan(std::max(lo, c - 2.0 * coarse), std::min(hi, c + 2.0 * coarse), step);
}

/// argmin of the asymmetric risk of U(lo, hi), risk integrated by the midpoint rule.
inline double grid_argmin_uniform(double lo, double hi, double tau, double step)
{
    constexpr int kQuad = 4000;
    auto risk = [&](double y) {
        double r = 0.0;
        for (int k = 0; k < kQuad; ++k) {
            const double x = lo + (hi - lo) * (k + 0.5) / kQuad;
            const double u = y - x;
            r += (u > 0.0 ? 1.0 - tau : tau) * u * u;
        }
        return r / kQuad;
    };
    double best = lo, best_risk = risk(lo);
    for (double y = lo; y <= hi; y += step) {
        const double r = risk(y);
        if (r < best_risk) {
            best_risk = r;
            best = y;
        }
    }
    return best;
}

inline double monte_carlo_filtered_mean_normal(double y_hat, double tau, int n, std::uint64_t seed)
{
    leq::Rng rng(seed);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        const double w = y_hat > x ? 1.0 - tau : tau;
        num += w * x;
        den += w;
    }
    return num / den;
}

}  // namespace oracle

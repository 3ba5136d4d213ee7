#pragma once

#include <span>
#include <variant>
#include <vector>

namespace leq {

/// Asymmetry parameter of the expectile loss, 0 < tau <= 1.
class ExpectileParam {
public:
    explicit ExpectileParam(double tau);

    double value() const { return tau_; }
    /// tau <= 0.5, the conservative regime.
    bool is_lower() const { return tau_ <= 0.5; }

private:
    double tau_;
};

// Scalar distributions with the partial moments the expectile machinery needs.

struct Empirical {
    std::vector<double> samples;
    std::vector<double> weights;  // nonnegative, sum to 1 within 1e-12
};

struct Normal {
    double mu = 0.0;
    double sigma = 1.0;
};

struct Uniform {
    double lo = 0.0;
    double hi = 1.0;
};

/// Mass 1 - p at x0 and mass p at x1.
struct TwoPoint {
    double x0 = 0.0;
    double x1 = 1.0;
    double p = 0.5;
};

using ScalarDistribution = std::variant<Empirical, Normal, Uniform, TwoPoint>;

/// Validates parameters; throws PreconditionError on violation.
void validate(const ScalarDistribution& dist);

/// Equal-weight empirical distribution over the samples.
Empirical make_empirical(std::span<const double> samples);
Empirical make_empirical(std::span<const double> samples, std::span<const double> weights);

double mean(const ScalarDistribution& dist);
/// p(X < y)
double mass_below(const ScalarDistribution& dist, double y);
/// p(X <= y)
double cdf(const ScalarDistribution& dist, double y);
/// E[X 1(X < y)]
double partial_mean_below(const ScalarDistribution& dist, double y);
/// Lower end of the support; -inf for the normal.
double essential_infimum(const ScalarDistribution& dist);

double standard_normal_pdf(double z);
double standard_normal_cdf(double z);

/// |tau - 1(u > 0)|
double expectile_weight(double u, ExpectileParam tau);

/// |tau - 1(u > 0)| * u^2
double expectile_loss(double u, ExpectileParam tau);

/// d/du of expectile_loss.
double expectile_loss_grad(double u, ExpectileParam tau);

/// The tau-expectile: the minimizer of E[L2^tau(y - X)].
///
/// Two-point and uniform distributions use their closed forms. Empirical and
/// normal distributions bisect the monotone first-order condition down to
/// floating-point resolution; SolverFailure is raised if the bracket has not
/// shrunk below 1e-10 after the iteration cap.
double expectile_of(const ScalarDistribution& dist, ExpectileParam tau);

/// Same as expectile_of but always uses the numeric bisection path.
double expectile_bisect(const ScalarDistribution& dist, ExpectileParam tau);

/// Filtered mean E[W X] / E[W] with W = |tau - 1(y_hat > X)|.
///
/// Its fixed point is the tau-expectile. Accepts tau in [0, 1]; when the
/// weight mass vanishes (tau = 0 and no mass below y_hat) y_hat is returned.
double filtered_mean_estimate(const ScalarDistribution& dist, double y_hat, double tau);

inline double filtered_mean_estimate(const ScalarDistribution& dist, double y_hat, ExpectileParam tau)
{
    return filtered_mean_estimate(dist, y_hat, tau.value());
}

}  // namespace leq

#include <doctest.h>

#include <chrono>
#include <cmath>

#include "leq/errors.hpp"
#include "leq/theory/theory.hpp"

using namespace leq;
using namespace leq::theory;

TEST_CASE("lemma 1")
{
    const Normal n{};
    const double y = expectile_of(n, ExpectileParam{0.25});
    CHECK(lemma1_check(n, 0.25, y));
    CHECK(filtered_mean_estimate(n, y, 0.25) == doctest::Approx(y).epsilon(1e-9));
    CHECK(lemma1_check(n, 0.25, y + 1.0));

    // Y = 0.1 for the fair coin at tau = 0.1; from y_hat = 0.5 the step lands on it.
    const TwoPoint coin{0.0, 1.0, 0.5};
    CHECK(filtered_mean_estimate(coin, 0.5, 0.1) == doctest::Approx(0.1));
    CHECK(lemma1_check(coin, 0.1, 0.5));
    CHECK_THROWS_AS(lemma1_check(coin, 0.1, 0.0), PreconditionError);
}

TEST_CASE("theorem 1 condition")
{
    const Uniform u{};
    for (double tau : {0.01, 0.1, 0.3}) {
        const double y = expectile_of(u, ExpectileParam{tau});
        CHECK(theorem1_condition(u, tau, y));
        CHECK(theorem1_condition(u, tau, y + 0.1));
    }
    CHECK(theorem1_condition(Normal{}, 0.5, -100.0));
    CHECK(theorem1_condition(Normal{}, 0.4999, -5.0));

    // U(0,1), tau = 0.01, y_hat = 0: left side 0, right side (Y - 0.01 / 0.98) / 2, Y = 0.1 / (0.1 + sqrt(0.99)).
    const double y = expectile_of(u, ExpectileParam{0.01});
    const double rhs = 0.5 * (y - 0.01 / 0.98);
    CHECK(y == doctest::Approx(0.1 / (0.1 + std::sqrt(0.99))).epsilon(1e-12));
    CHECK(rhs > 0.0);
    CHECK_FALSE(theorem1_condition(u, 0.01, 0.0));
    // An atom at y_hat does not count toward the left side.
    const TwoPoint atom{0.0, 1.0, 0.5};
    CHECK_FALSE(theorem1_condition(atom, 0.05, 0.0));
}

TEST_CASE("lemma 2")
{
    const Normal n{};
    const double y = expectile_of(n, ExpectileParam{0.2});
    CHECK(lemma2_check(n, 0.2, y - 0.05));
    CHECK_THROWS_AS(lemma2_check(n, 0.2, y + 1.0), PreconditionError);
}

TEST_CASE("monte carlo theorem suite")
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = monte_carlo_theorem_suite(20000, 0);
    MESSAGE("suite: " << rep.trials << " of " << rep.draws << " draws, max diff " << rep.max_error_diff << ", "
                      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s");
    CHECK(rep.trials == 20000);
    CHECK(rep.violations == 0);
    CHECK(rep.lemma1_violations == 0);
    CHECK(rep.lemma2_violations == 0);
    CHECK(rep.lemma1_trials > 1000);
    CHECK(rep.lemma2_trials > 1000);
    CHECK(rep.counterexamples.empty());

    const auto again = monte_carlo_theorem_suite(500, 7);
    CHECK(nlohmann::json(again).dump() == nlohmann::json(monte_carlo_theorem_suite(500, 7)).dump());
    CHECK_THROWS_AS(monte_carlo_theorem_suite(0, 1), PreconditionError);
}

TEST_CASE("single atom")
{
    const std::vector<double> one{2.5};
    const Empirical e = make_empirical(one);
    const double y = expectile_of(e, ExpectileParam{0.1});
    CHECK(y == 2.5);
    for (double y_hat : {-1.0, 2.5, 7.0}) {
        CHECK(filtered_mean_estimate(e, y_hat, 0.1) == 2.5);
        CHECK(error_difference(y, y_hat, 2.5) <= 0.0);
    }
}

TEST_CASE("error_difference limits")
{
    const double inf = std::numeric_limits<double>::infinity();
    CHECK(error_difference(-inf, -inf, -inf) == 0.0);
    CHECK(error_difference(-inf, 0.3, -0.2) == doctest::Approx(-0.5));
    CHECK(error_difference(0.1, -inf, 0.0) == -inf);
    CHECK(error_difference(1.0, 3.0, 2.0) == doctest::Approx(-1.0));
}

TEST_CASE("exception region scans")
{
    ScanConfig normal;
    normal.distribution = Normal{};
    const auto rn = exception_region_scan(normal);
    CHECK(rn.cells.size() == 40000);
    CHECK(rn.exception_count == 0);

    ScanConfig uniform;
    uniform.distribution = Uniform{};
    const auto ru = exception_region_scan(uniform);
    CHECK(ru.exception_count == 39);
    for (const auto& [i, j] : ru.exceptions) CHECK(j == 0);

    for (const auto& c : ru.cells) {
        if (c.tau == c.tau_hat) CHECK(std::abs(c.error_diff) <= 1e-12);
        if (c.tau > 0.0 && c.tau_hat > 0.0 && theorem1_condition(Uniform{}, c.tau, c.y_hat)) {
            CHECK(c.error_diff <= 1e-12);
        }
    }

    // Shifting the normal moves every estimate by the same amount.
    ScanConfig shifted = normal;
    shifted.distribution = Normal{3.0, 1.0};
    shifted.points = 40;
    shifted.step = 0.0125;
    normal.points = 40;
    normal.step = 0.0125;
    const auto a = exception_region_scan(normal), b = exception_region_scan(shifted);
    for (std::size_t k = 0; k < a.cells.size(); ++k) {
        if (std::isinf(a.cells[k].y) || std::isinf(a.cells[k].y_hat)) continue;
        CHECK(b.cells[k].y_new - 3.0 == doctest::Approx(a.cells[k].y_new).epsilon(1e-8));
        CHECK(b.cells[k].error_diff == doctest::Approx(a.cells[k].error_diff).epsilon(1e-6).scale(1.0));
    }
    CHECK(a.exception_count == b.exception_count);

    ScanConfig mid = uniform;
    mid.start = GridStart::shift;
    const auto g = mid.grid();
    CHECK(g.front() == doctest::Approx(0.00125));
    CHECK(g.back() == doctest::Approx(0.49875));
    MESSAGE("uniform exceptions with the midpoint grid: " << exception_region_scan(mid).exception_count);

    const auto csv = scan_csv(ru);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 40001);
    CHECK(scan_summary(ru)["exception_count"] == 39);
}

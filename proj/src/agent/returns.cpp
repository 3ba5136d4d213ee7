#include "leq/agent/returns.hpp"

#include <cmath>
#include <string>

#include "leq/errors.hpp"

namespace leq::agent {

namespace {

double bootstrap(const RolloutValues& r, int j)
{
    if (j == r.length() && r.terminal) return 0.0;
    return r.values[static_cast<std::size_t>(j)];
}

}  // namespace

double n_step_return(const RolloutValues& r, int t, int n, double gamma)
{
    if (t < 0 || n < 1 || t + n > r.length()) {
        throw PreconditionError("n_step_return: t=" + std::to_string(t) + ", N=" + std::to_string(n) +
                                " out of range for length " + std::to_string(r.length()));
    }
    if (static_cast<int>(r.values.size()) != r.length() + 1) {
        throw DimensionMismatch("n_step_return: need L+1 bootstrap values");
    }
    double g = 0.0, disc = 1.0;
    for (int i = 0; i < n; ++i) {
        g += disc * r.rewards[static_cast<std::size_t>(t + i)];
        disc *= gamma;
    }
    return g + disc * bootstrap(r, t + n);
}

std::vector<double> lambda_weights(int n, double lambda)
{
    if (n < 1) throw PreconditionError("lambda_weights: n must be >= 1");
    std::vector<double> w(static_cast<std::size_t>(n), 0.0);
    if (lambda == 0.0) {
        w[0] = 1.0;
        return w;
    }
    const double norm = (1.0 - lambda) / (1.0 - std::pow(lambda, n));
    double p = 1.0;
    for (auto& x : w) {
        x = norm * p;
        p *= lambda;
    }
    return w;
}

std::vector<double> target_weights(CriticTarget mode, int n, double lambda)
{
    switch (mode) {
    case CriticTarget::lambda: return lambda_weights(n, lambda);
    case CriticTarget::one_step: return lambda_weights(n, 0.0);
    case CriticTarget::h_step: {
        std::vector<double> w(static_cast<std::size_t>(n), 0.0);
        w.back() = 1.0;
        return w;
    }
    }
    return lambda_weights(n, lambda);
}

LambdaReturnTable lambda_returns(const RolloutValues& r, double lambda, double gamma, CriticTarget mode)
{
    const int L = r.length();
    LambdaReturnTable table;
    for (int t = 0; t < L; ++t) {
        std::vector<double> g;
        for (int i = 1; i <= L - t; ++i) g.push_back(n_step_return(r, t, i, gamma));
        auto w = target_weights(mode, L - t, lambda);
        double q = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) q += w[i] * g[i];
        table.n_step.push_back(std::move(g));
        table.weights.push_back(std::move(w));
        table.q.push_back(q);
    }
    return table;
}

ReturnCoefficients return_coefficients(int length, bool terminal, double lambda, double gamma, CriticTarget mode)
{
    const int L = length;
    ReturnCoefficients c{Eigen::MatrixXd::Zero(L, L), Eigen::MatrixXd::Zero(L, L + 1)};
    for (int t = 0; t < L; ++t) {
        const auto w = target_weights(mode, L - t, lambda);
        // G_{t:t+i} puts gamma^k on r_{t+k} (k < i) and gamma^i on v_{t+i}.
        double tail = 1.0;  // sum of w_i over i > k
        double disc = 1.0;
        for (int k = 0; k < L - t; ++k) {
            c.reward(t, t + k) = disc * tail;
            disc *= gamma;
            const double wi = w[static_cast<std::size_t>(k)];
            c.value(t, t + k + 1) = wi * disc;
            tail -= wi;
        }
    }
    if (terminal) c.value.col(L).setZero();
    return c;
}

}  // namespace leq::agent

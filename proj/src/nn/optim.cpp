#include "leq/nn/optim.hpp"

#include <cmath>

#include "leq/errors.hpp"

namespace leq::nn {

Adam::Adam(Eigen::Index size, double lr, double beta1, double beta2, double eps)
    : m_(Vector::Zero(size)), v_(Vector::Zero(size)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
{
}

void Adam::step(Vector& params, const Vector& grad)
{
    if (params.size() != m_.size() || grad.size() != m_.size()) {
        throw DimensionMismatch("Adam::step: parameter/gradient length mismatch");
    }
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

nlohmann::json Adam::state_header() const
{
    return {{"lr", lr_}, {"beta1", beta1_}, {"beta2", beta2_}, {"eps", eps_}, {"step", t_}};
}

void Adam::restore(const nlohmann::json& header, Vector m, Vector v)
{
    if (m.size() != v.size()) throw FormatError("Adam::restore: moment length mismatch");
    lr_ = header.at("lr").get<double>();
    beta1_ = header.at("beta1").get<double>();
    beta2_ = header.at("beta2").get<double>();
    eps_ = header.at("eps").get<double>();
    t_ = header.at("step").get<std::int64_t>();
    m_ = std::move(m);
    v_ = std::move(v);
}

EmaTracker::EmaTracker(const Vector& init, double decay) : shadow_(init), decay_(decay)
{
    if (!(decay > 0.0 && decay < 1.0)) throw PreconditionError("EMA decay must lie in (0, 1)");
}

void EmaTracker::update(const Vector& params)
{
    if (params.size() != shadow_.size()) throw DimensionMismatch("EmaTracker::update: length mismatch");
    shadow_ += (1.0 - decay_) * (params - shadow_);
}

}  // namespace leq::nn

#include "leq/nn/mlp.hpp"

#include <cmath>

#include "leq/errors.hpp"
#include "leq/rng.hpp"

namespace leq::nn {

namespace {

Matrix activate(Activation a, const Matrix& z)
{
    switch (a) {
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::tanh: {
        // (1 - e) / (1 + e) with e = exp(-2|z|) vectorizes where std::tanh does not.
        const Eigen::ArrayXXd e = (-2.0 * z.array().abs()).exp();
        return ((1.0 - e) / (1.0 + e) * z.array().sign()).matrix();
    }
    case Activation::elu: return (z.array() > 0.0).select(z.array(), z.array().unaryExpr([](double v) { return std::expm1(v); })).matrix();
    }
    return z;
}

// Derivative from the pre-activation z and the activation h.
Matrix activate_grad(Activation a, const Matrix& z, const Matrix& h)
{
    switch (a) {
    case Activation::relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - h.array().square()).matrix();
    case Activation::elu: return (z.array() > 0.0).select(1.0, h.array() + 1.0).matrix();
    }
    return Matrix::Ones(z.rows(), z.cols());
}

double symlog_scalar(double x) { return std::copysign(std::log1p(std::abs(x)), x); }

}  // namespace

std::string to_string(Activation a)
{
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::elu: return "elu";
    }
    return "relu";
}

Activation activation_from_string(const std::string& name)
{
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "elu") return Activation::elu;
    throw PreconditionError("unknown activation '" + name + "'");
}

void MlpSpec::validate() const
{
    if (input_dim < 1 || output_dim < 1) throw PreconditionError("MlpSpec: dims must be >= 1");
    if (hidden_dims.empty()) throw PreconditionError("MlpSpec: at least one hidden layer required");
    for (int h : hidden_dims) {
        if (h < 1) throw PreconditionError("MlpSpec: hidden dims must be >= 1");
    }
}

void to_json(nlohmann::json& j, const MlpSpec& spec)
{
    j = nlohmann::json{{"input_dim", spec.input_dim},
                       {"hidden_dims", spec.hidden_dims},
                       {"output_dim", spec.output_dim},
                       {"use_layernorm", spec.use_layernorm},
                       {"use_symlog_input", spec.use_symlog_input},
                       {"activation", to_string(spec.activation)}};
}

void from_json(const nlohmann::json& j, MlpSpec& spec)
{
    spec.input_dim = j.at("input_dim").get<int>();
    spec.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
    spec.output_dim = j.at("output_dim").get<int>();
    spec.use_layernorm = j.at("use_layernorm").get<bool>();
    spec.use_symlog_input = j.at("use_symlog_input").get<bool>();
    spec.activation = activation_from_string(j.at("activation").get<std::string>());
    spec.validate();
}

ParamLayout ParamLayout::for_spec(const MlpSpec& spec)
{
    spec.validate();
    ParamLayout layout;
    Eigen::Index offset = 0;
    Eigen::Index in = spec.input_dim;
    auto add_dense = [&](Eigen::Index out, bool norm) {
        LayerSlices s;
        s.rows = out;
        s.cols = in;
        s.weight = offset;
        offset += out * in;
        s.bias = offset;
        offset += out;
        if (norm) {
            s.norm_gain = offset;
            offset += out;
            s.norm_bias = offset;
            offset += out;
        }
        layout.layers.push_back(s);
        in = out;
    };
    for (int h : spec.hidden_dims) add_dense(h, spec.use_layernorm);
    add_dense(spec.output_dim, false);
    layout.size = offset;
    return layout;
}

void to_json(nlohmann::json& j, const ParamLayout& layout)
{
    j = nlohmann::json::array();
    for (const auto& s : layout.layers) {
        j.push_back({{"weight", s.weight},
                     {"bias", s.bias},
                     {"rows", s.rows},
                     {"cols", s.cols},
                     {"norm_gain", s.norm_gain},
                     {"norm_bias", s.norm_bias}});
    }
}

Vector symlog(const Vector& x) { return x.unaryExpr(&symlog_scalar); }

Matrix symlog(const Matrix& x) { return x.unaryExpr(&symlog_scalar); }

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)), layout_(ParamLayout::for_spec(spec_)), params_(Vector::Zero(layout_.size)) {}

Mlp::Mlp(MlpSpec spec, std::uint64_t init_seed) : Mlp(std::move(spec)) { initialize(init_seed); }

void Mlp::set_params(const Vector& params)
{
    if (params.size() != layout_.size) throw DimensionMismatch("Mlp::set_params: parameter length mismatch");
    params_ = params;
}

void Mlp::initialize(std::uint64_t seed)
{
    Rng rng(seed);
    params_.setZero();
    const std::size_t n_layers = layout_.layers.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& s = layout_.layers[l];
        const bool output = l + 1 == n_layers;
        // He-uniform for hidden layers; output layer starts small so initial predictions are near zero.
        const double bound = output ? std::sqrt(3.0 / static_cast<double>(s.cols)) * 0.1
                                    : std::sqrt(6.0 / static_cast<double>(s.cols));
        for (Eigen::Index i = 0; i < s.rows * s.cols; ++i) params_[s.weight + i] = rng.uniform(-bound, bound);
        if (s.norm_gain >= 0) params_.segment(s.norm_gain, s.rows).setOnes();
    }
}

void Mlp::check_input(const Matrix& input) const
{
    if (input.rows() != spec_.input_dim) {
        throw DimensionMismatch("Mlp: expected input dim " + std::to_string(spec_.input_dim) + ", got " +
                                std::to_string(input.rows()));
    }
}

Matrix Mlp::forward(const Matrix& input) const
{
    MlpTape tape;
    return forward(input, tape);
}

Vector Mlp::forward(const Vector& input) const
{
    Matrix in = input;
    return forward(in).col(0);
}

Matrix Mlp::forward(const Matrix& input, MlpTape& tape) const
{
    check_input(input);
    const std::size_t n_hidden = spec_.hidden_dims.size();
    tape.input = input;
    tape.squashed = spec_.use_symlog_input ? symlog(input) : input;
    tape.normalized.resize(n_hidden);
    tape.inv_std.resize(n_hidden);
    tape.pre_act.resize(n_hidden);
    tape.hidden.resize(n_hidden);

    const Matrix* x = &tape.squashed;
    for (std::size_t l = 0; l < n_hidden; ++l) {
        const auto& s = layout_.layers[l];
        Eigen::Map<const Matrix> w(params_.data() + s.weight, s.rows, s.cols);
        Eigen::Map<const Vector> b(params_.data() + s.bias, s.rows);
        Matrix z = b.replicate(1, x->cols());
        z.noalias() += w * (*x);
        if (s.norm_gain >= 0) {
            Eigen::Map<const Vector> gain(params_.data() + s.norm_gain, s.rows);
            Eigen::Map<const Vector> shift(params_.data() + s.norm_bias, s.rows);
            const double n = static_cast<double>(s.rows);
            const Eigen::RowVectorXd mu = z.colwise().sum() / n;
            z.rowwise() -= mu;
            const Eigen::RowVectorXd inv_std =
                ((z.colwise().squaredNorm() / n).array() + kLayerNormEps).rsqrt().matrix();
            z.array().rowwise() *= inv_std.array();
            tape.inv_std[l] = inv_std.transpose();
            tape.pre_act[l] = ((z.array().colwise() * gain.array()).colwise() + shift.array()).matrix();
            tape.normalized[l] = std::move(z);
        } else {
            tape.pre_act[l] = std::move(z);
        }
        tape.hidden[l] = activate(spec_.activation, tape.pre_act[l]);
        x = &tape.hidden[l];
    }
    const auto& s = layout_.layers.back();
    Eigen::Map<const Matrix> w(params_.data() + s.weight, s.rows, s.cols);
    Eigen::Map<const Vector> b(params_.data() + s.bias, s.rows);
    Matrix out = b.replicate(1, x->cols());
    out.noalias() += w * (*x);
    return out;
}

Matrix Mlp::backward(const MlpTape& tape, const Matrix& output_cotangent, Vector* param_grad) const
{
    const std::size_t n_hidden = spec_.hidden_dims.size();
    if (output_cotangent.rows() != spec_.output_dim || output_cotangent.cols() != tape.input.cols()) {
        throw DimensionMismatch("Mlp::backward: cotangent shape mismatch");
    }
    if (param_grad && param_grad->size() != layout_.size) {
        throw DimensionMismatch("Mlp::backward: gradient buffer length mismatch");
    }

    auto layer_input = [&](std::size_t l) -> const Matrix& { return l == 0 ? tape.squashed : tape.hidden[l - 1]; };

    // Output layer.
    Matrix g = output_cotangent;
    {
        const auto& s = layout_.layers.back();
        Eigen::Map<const Matrix> w(params_.data() + s.weight, s.rows, s.cols);
        if (param_grad) {
            Eigen::Map<Matrix> dw(param_grad->data() + s.weight, s.rows, s.cols);
            dw.noalias() += g * layer_input(n_hidden).transpose();
            param_grad->segment(s.bias, s.rows) += g.rowwise().sum();
        }
        g = w.transpose() * g;
    }

    for (std::size_t li = n_hidden; li-- > 0;) {
        const auto& s = layout_.layers[li];
        g.array() *= activate_grad(spec_.activation, tape.pre_act[li], tape.hidden[li]).array();
        if (s.norm_gain >= 0) {
            Eigen::Map<const Vector> gain(params_.data() + s.norm_gain, s.rows);
            const Matrix& xhat = tape.normalized[li];
            if (param_grad) {
                param_grad->segment(s.norm_gain, s.rows) += (g.array() * xhat.array()).rowwise().sum().matrix();
                param_grad->segment(s.norm_bias, s.rows) += g.rowwise().sum();
            }
            Matrix dxhat = (g.array().colwise() * gain.array()).matrix();
            const double n = static_cast<double>(s.rows);
            const Eigen::RowVectorXd m1 = dxhat.colwise().sum() / n;
            const Eigen::RowVectorXd m2 = (dxhat.array() * xhat.array()).colwise().sum().matrix() / n;
            dxhat.rowwise() -= m1;
            dxhat.array() -= xhat.array().rowwise() * m2.array();
            dxhat.array().rowwise() *= tape.inv_std[li].transpose().array();
            g = std::move(dxhat);
        }
        Eigen::Map<const Matrix> w(params_.data() + s.weight, s.rows, s.cols);
        if (param_grad) {
            Eigen::Map<Matrix> dw(param_grad->data() + s.weight, s.rows, s.cols);
            dw.noalias() += g * layer_input(li).transpose();
            param_grad->segment(s.bias, s.rows) += g.rowwise().sum();
        }
        g = w.transpose() * g;
    }

    if (spec_.use_symlog_input) {
        g.array() /= (1.0 + tape.input.array().abs());
    }
    return g;
}

}  // namespace leq::nn

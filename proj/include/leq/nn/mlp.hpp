#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace leq::nn {

using Matrix = Eigen::MatrixXd;  // one column per sample
using Vector = Eigen::VectorXd;

enum class Activation { relu, tanh, elu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct MlpSpec {
    int input_dim = 1;
    std::vector<int> hidden_dims{64, 64};
    int output_dim = 1;
    bool use_layernorm = true;
    bool use_symlog_input = true;
    Activation activation = Activation::relu;

    void validate() const;
    bool operator==(const MlpSpec&) const = default;
};

void to_json(nlohmann::json& j, const MlpSpec& spec);
void from_json(const nlohmann::json& j, MlpSpec& spec);

/// Offsets of every parameter block inside the flat parameter vector.
struct LayerSlices {
    Eigen::Index weight = 0;  // rows x cols, column-major
    Eigen::Index bias = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index norm_gain = -1;  // LayerNorm affine, -1 when absent
    Eigen::Index norm_bias = -1;
};

struct ParamLayout {
    std::vector<LayerSlices> layers;  // hidden layers first, output layer last
    Eigen::Index size = 0;

    static ParamLayout for_spec(const MlpSpec& spec);
};

void to_json(nlohmann::json& j, const ParamLayout& layout);

/// Activations recorded by a forward pass, consumed by backward.
struct MlpTape {
    Matrix input;                  // raw input
    Matrix squashed;               // after optional symlog
    std::vector<Matrix> normalized;  // per hidden layer: LayerNorm x_hat (empty without norm)
    std::vector<Vector> inv_std;     // per hidden layer, per column
    std::vector<Matrix> pre_act;     // per hidden layer, input to the activation
    std::vector<Matrix> hidden;      // per hidden layer, post-activation
};

Vector symlog(const Vector& x);
Matrix symlog(const Matrix& x);

constexpr double kLayerNormEps = 1e-6;

/// Multilayer perceptron over a flat parameter vector.
///
/// Hidden layer: Linear -> LayerNorm (optional) -> activation. Output layer
/// is linear. forward/backward are const and thread-compatible.
class Mlp {
public:
    Mlp() = default;
    explicit Mlp(MlpSpec spec);
    Mlp(MlpSpec spec, std::uint64_t init_seed);

    const MlpSpec& spec() const { return spec_; }
    const ParamLayout& layout() const { return layout_; }
    const Vector& params() const { return params_; }
    Vector& params() { return params_; }
    void set_params(const Vector& params);
    Eigen::Index num_params() const { return layout_.size; }

    /// He-uniform hidden weights, small output weights, unit LayerNorm gains.
    void initialize(std::uint64_t seed);

    Matrix forward(const Matrix& input) const;
    Matrix forward(const Matrix& input, MlpTape& tape) const;
    Vector forward(const Vector& input) const;

    /// Reverse-mode pass for <output, cotangent>. Adds the parameter gradient
    /// into param_grad when non-null and returns the input gradient.
    Matrix backward(const MlpTape& tape, const Matrix& output_cotangent, Vector* param_grad) const;

private:
    void check_input(const Matrix& input) const;

    MlpSpec spec_;
    ParamLayout layout_;
    Vector params_;
};

}  // namespace leq::nn

#include "leq/agent/networks.hpp"

#include "leq/errors.hpp"

namespace leq::agent {

Policy::Policy(int obs_dim, int act_dim, const std::vector<int>& hidden, std::uint64_t seed)
{
    nn::MlpSpec spec;
    spec.input_dim = obs_dim;
    spec.hidden_dims = hidden;
    spec.output_dim = act_dim;
    spec.use_layernorm = true;
    spec.use_symlog_input = true;
    net_ = nn::Mlp(spec, seed);
}

Matrix Policy::act(const Matrix& states) const { return net_.forward(states).array().tanh(); }

Matrix Policy::act(const Matrix& states, Tape& tape) const
{
    tape.action = net_.forward(states, tape.mlp).array().tanh();
    return tape.action;
}

Matrix Policy::backward(const Tape& tape, const Matrix& g_action, Vector* param_grad) const
{
    const Matrix g_pre = g_action.array() * (1.0 - tape.action.array().square());
    return net_.backward(tape.mlp, g_pre, param_grad);
}

Critic::Critic(int obs_dim, int act_dim, const std::vector<int>& hidden, std::uint64_t seed) : obs_dim_(obs_dim)
{
    nn::MlpSpec spec;
    spec.input_dim = obs_dim + act_dim;
    spec.hidden_dims = hidden;
    spec.output_dim = 1;
    spec.use_layernorm = true;
    spec.use_symlog_input = true;
    net_ = nn::Mlp(spec, seed);
}

Matrix Critic::join(const Matrix& states, const Matrix& actions) const
{
    if (states.rows() != obs_dim_ || actions.rows() != act_dim() || states.cols() != actions.cols()) {
        throw DimensionMismatch("Critic: state/action shape mismatch");
    }
    Matrix x(states.rows() + actions.rows(), states.cols());
    x.topRows(states.rows()) = states;
    x.bottomRows(actions.rows()) = actions;
    return x;
}

Vector Critic::q(const Matrix& states, const Matrix& actions) const
{
    return net_.forward(join(states, actions)).row(0).transpose();
}

Vector Critic::q(const Matrix& states, const Matrix& actions, Tape& tape) const
{
    return net_.forward(join(states, actions), tape.mlp).row(0).transpose();
}

Vector Critic::q_with(const Vector& params, const Matrix& states, const Matrix& actions) const
{
    nn::Mlp shadow = net_;
    shadow.set_params(params);
    return shadow.forward(join(states, actions)).row(0).transpose();
}

std::pair<Matrix, Matrix> Critic::backward(const Tape& tape, const Vector& g_q, Vector* param_grad) const
{
    const Matrix gx = net_.backward(tape.mlp, g_q.transpose(), param_grad);
    return {gx.topRows(obs_dim_), gx.bottomRows(gx.rows() - obs_dim_)};
}

}  // namespace leq::agent

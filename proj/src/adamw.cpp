#include "hcvp/adamw.hpp"

#include <cmath>

namespace hcvp {

void adamw_update(std::span<double> param,
                  std::span<const double> grad,
                  std::span<double> first_moment,
                  std::span<double> second_moment,
                  const AdamWOptions& options,
                  std::uint64_t step) {
    if (grad.size() != param.size() || first_moment.size() != param.size() ||
        second_moment.size() != param.size()) {
        throw DimensionError("adamw_update: parameter, gradient and moment sizes differ");
    }
    if (step == 0) throw ContractError("adamw_update: step count must be incremented before the update");
    const double t = static_cast<double>(step);
    const double bias1 = 1.0 - std::pow(options.beta1, t);
    const double bias2 = 1.0 - std::pow(options.beta2, t);
    const double decay = 1.0 - options.learning_rate * options.weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        first_moment[i] = options.beta1 * first_moment[i] + (1.0 - options.beta1) * g;
        second_moment[i] = options.beta2 * second_moment[i] + (1.0 - options.beta2) * g * g;
        const double m_hat = first_moment[i] / bias1;
        const double v_hat = second_moment[i] / bias2;
        param[i] = param[i] * decay - options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon);
    }
}

AdamW::AdamW(ParamList params, AdamWOptions options) : params_(std::move(params)), options_(options) {
    state_.first_moment.resize(params_.size());
    state_.second_moment.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        state_.first_moment[i].assign(params_[i].tensor.numel(), 0.0);
        state_.second_moment[i].assign(params_[i].tensor.numel(), 0.0);
    }
}

void AdamW::step() {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient in parameter '" + p.name + "'");
        }
    }
    ++state_.step_count;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].tensor;
        if (!t.requires_grad() || !t.has_grad()) continue;
        adamw_update(t.mutable_data(), t.grad(), state_.first_moment[i], state_.second_moment[i], options_,
                     state_.step_count);
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void AdamW::set_state(State state) {
    if (state.first_moment.size() != params_.size() || state.second_moment.size() != params_.size()) {
        throw DimensionError("adamw: state covers " + std::to_string(state.first_moment.size()) +
                             " parameters, optimizer has " + std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (state.first_moment[i].size() != params_[i].tensor.numel() ||
            state.second_moment[i].size() != params_[i].tensor.numel()) {
            throw DimensionError("adamw: moment size mismatch for '" + params_[i].name + "'");
        }
    }
    state_ = std::move(state);
}

} // namespace hcvp

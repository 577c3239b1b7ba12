#include "clbruno/optimizer.hpp"

#include <cmath>

#include "clbruno/errors.hpp"

namespace clbruno {

AdamState::AdamState(std::span<Parameter* const> params, AdamOptions opts) : options(opts) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const Parameter* p : params) {
    first_moment.emplace_back(p->value.rows(), p->value.cols());
    second_moment.emplace_back(p->value.rows(), p->value.cols());
  }
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ContractError("adam_step: parameter list does not match optimizer state");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = *params[k];
    if (!p.grad.same_shape(p.value) || !state.first_moment[k].same_shape(p.value)) {
      throw DimensionError("adam_step: shape of '" + p.name + "' changed since the state was built");
    }
    if (!p.grad.all_finite()) {
      throw DivergenceError("non-finite gradient in parameter '" + p.name + "'");
    }
  }

  ++state.step_count;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.value[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) {
    p->zero_grad();
  }
}

}  // namespace clbruno

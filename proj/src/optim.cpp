// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/optim.hpp"

#include <cmath>

#include "hcn/error.hpp"

namespace hcn {

double learning_rate(const AdamConfig& config, std::uint64_t step) {
  return config.base_lr *
         std::pow(config.decay_rate, static_cast<double>(step) / config.decay_steps);
}

void adam_step(TrainState& state, ParameterStore& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    if (p.grad.shape() != p.value.shape()) {
      throw ShapeError("adam_step: gradient of '" + p.name + "' has shape " +
                       shape_str(p.grad.shape()) + ", parameter has " +
                       shape_str(p.value.shape()));
    }
    if (!p.grad.all_finite()) {
      throw NumericError("adam_step: non-finite gradient for parameter '" + p.name + "' at step " +
                         std::to_string(state.step));
    }
  }

  const AdamConfig& c = state.adam;
  const double lr = learning_rate(c, state.step);
  const double t = static_cast<double>(state.step + 1);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    Tensor& m = state.first_moment[p.name];
    Tensor& v = state.second_moment[p.name];
    if (m.shape() != p.value.shape()) m = Tensor(p.value.shape());
    if (v.shape() != p.value.shape()) v = Tensor(p.value.shape());
    double decay = 0.0;
    if (auto it = state.weight_decay.find(p.name); it != state.weight_decay.end()) {
      decay = it->second;
    }
    for (std::size_t k = 0; k < p.value.numel(); ++k) {
      const double g = p.grad[k] + decay * p.value[k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p.value[k] -= lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
  ++state.step;
}

}  // namespace hcn

// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "hcn/autograd.hpp"
#include "hcn/tensor.hpp"

namespace hcn {

struct AdamConfig {
  double base_lr = 1e-3;
  double decay_rate = 0.99;
  double decay_steps = 1000.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// lr(step) = base_lr * decay_rate^(step / decay_steps), continuous exponent.
double learning_rate(const AdamConfig& config, std::uint64_t step);

struct TrainState {
  AdamConfig adam;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  // Parameter name -> coefficient; added to the gradient before the moments.
  std::map<std::string, double> weight_decay;
};

// One bias-corrected Adam update of every parameter in `params` using the
// gradients currently stored in them. Throws NumericError naming the first
// parameter with a non-finite gradient; nothing is modified in that case.
void adam_step(TrainState& state, ParameterStore& params);

}  // namespace hcn

// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the test executables: random tensors and a central
// finite-difference gradient checker for tape-recorded functions.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hcn/autograd.hpp"
#include "hcn/model.hpp"
#include "hcn/tensor.hpp"

namespace hcn::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Values bounded away from zero so ReLU kinks stay out of the difference step.
inline Tensor random_away_from_zero(const Shape& shape, Rng& rng, double margin = 0.05) {
  Tensor t = random_tensor(shape, rng);
  for (double& v : t.data()) v = v < 0 ? v - margin : v + margin;
  return t;
}

// Distinct values in random order, spaced well beyond the difference step.
inline Tensor random_distinct(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  std::vector<double> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i) - 1.0;
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), t.raw());
  return t;
}

// Scalar sum(r * y); its gradient with respect to y is r.
inline Var probe(Tape& tape, Var y, const Tensor& r) {
  const Tensor& v = tape.value(y);
  double s = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) s += v[i] * r[i];
  return tape.record(
      Tensor({1}, {s}), {y},
      [y, r](Tape& t, const Tensor& g) {
        Tensor gy = r;
        gy *= g[0];
        t.accumulate(y, std::move(gy));
      },
      "probe");
}

using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[<index>] analytic=.. numeric=.."
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is ~0 from turning roundoff into huge ratios.
inline double rel_error(double a, double n, double floor = 1e-4) {
  return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), floor});
}

// Compares tape gradients of sum(r * fn(params)) with central differences.
// Without an `r`, the output must already be a scalar and r = 1.
inline GradCheck check_gradients(ParameterStore& params, const TapeFn& fn, Rng& rng,
                                 double step = 1e-5, bool scalar_output = false) {
  Tensor r;
  auto run = [&](bool backward) {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(tape.parameter(params[i]));
    Var y = fn(tape, vars);
    if (r.empty()) {
      r = scalar_output ? Tensor(tape.value(y).shape(), 1.0)
                        : random_tensor(tape.value(y).shape(), rng);
    }
    Var loss = probe(tape, y, r);
    if (backward) tape.backward(loss);
    return tape.value(loss)[0];
  };
  params.zero_grad();
  run(true);
  std::vector<Tensor> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(params[i].grad);

  GradCheck out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& value = params[p].value;
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double saved = value[i];
      value[i] = saved + step;
      const double plus = run(false);
      value[i] = saved - step;
      const double minus = run(false);
      value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double e = rel_error(analytic[p][i], numeric);
      if (e > out.max_rel_error) {
        out.max_rel_error = e;
        out.worst = params[p].name + "[" + std::to_string(i) + "] analytic=" +
                    std::to_string(analytic[p][i]) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Parameter count written out layer by layer from the architecture text.
inline std::size_t closed_form_count(const ModelConfig& c) {
  const bool early = c.fusion == FusionMode::kEarly;
  const std::size_t stacked = early ? c.max_persons * c.joints : c.joints;
  const std::size_t in1 = c.variant == Variant::kGlobal ? c.coords : stacked;
  const std::size_t in3 = c.variant == Variant::kGlobal ? stacked : c.coords;
  const std::size_t n = c.temporal_kernel, s = c.spatial_kernel;
  const ChannelConfig& k = c.channels;
  auto conv = [](std::size_t out, std::size_t in, std::size_t kh, std::size_t kw) {
    return out * in * kh * kw + out;
  };
  std::size_t stream = conv(k.conv1, in1, 1, 1) + conv(k.conv2, k.conv1, n, 1) +
                       conv(k.conv3, in3, n, s);
  if (c.include_conv4) stream += conv(k.conv4, k.conv3, n, s);
  const std::size_t stream_out = c.include_conv4 ? k.conv4 : k.conv3;

  // Feature map extents: frames x conv2 channels, halved at each pooled layer
  // (width only while it is at least 2).
  std::size_t h = c.frames, w = k.conv2;
  auto pool = [&](bool on) {
    if (!on) return;
    h /= 2;
    if (w >= 2) w /= 2;
  };
  pool(c.pools.conv3);
  if (c.include_conv4) pool(c.pools.conv4);
  pool(c.pools.conv5);
  pool(c.pools.conv6);
  const std::size_t fc7_in = k.conv6 * h * w * (c.fusion == FusionMode::kLateConcat ? c.max_persons : 1);
  return 2 * stream + conv(k.conv5, 2 * stream_out, n, s) + conv(k.conv6, k.conv5, n, s) +
         (k.fc7 * fc7_in + k.fc7) + (c.classes * k.fc7 + c.classes);
}

}  // namespace hcn::testing

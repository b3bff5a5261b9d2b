// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hcn/error.hpp"
#include "hcn/ops.hpp"

namespace hcn {
namespace losses {

LossAndGrad softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy: logits must be [batch, classes], got " +
                     shape_str(logits.shape()));
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(batch));
  }
  LossAndGrad out{0.0, Tensor(logits.shape())};
  if (batch == 0) return out;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) {
      throw UsageError("softmax_cross_entropy: label " + std::to_string(labels[b]) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
    const double* z = logits.raw() + b * classes;
    double* g = out.grad.raw() + b * classes;
    const double m = *std::max_element(z, z + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - m);
    const double log_norm = m + std::log(sum);
    out.loss += (log_norm - z[labels[b]]) * inv_batch;
    for (std::size_t c = 0; c < classes; ++c) g[c] = std::exp(z[c] - log_norm) * inv_batch;
    g[labels[b]] -= inv_batch;
  }
  return out;
}

double smooth_l1_value(double residual) {
  const double a = std::abs(residual);
  return a < 1.0 ? 0.5 * residual * residual : a - 0.5;
}

double smooth_l1_derivative(double residual) {
  if (std::abs(residual) < 1.0) return residual;
  return residual > 0.0 ? 1.0 : -1.0;
}

LossAndGrad smooth_l1(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw ShapeError("smooth_l1: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(target.size()) + " targets");
  }
  LossAndGrad out{0.0, Tensor({pred.size()})};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    out.loss += smooth_l1_value(d);
    out.grad[i] = smooth_l1_derivative(d);
  }
  return out;
}

DetectionLoss detection_loss(const DetectionLossBatch& batch) {
  const Tensor& p = batch.probabilities;
  if (p.rank() != 2) throw ShapeError("detection_loss: probabilities must be [N_cls, classes]");
  const std::size_t n_cls = p.dim(0), classes = p.dim(1);
  if (batch.labels.size() != n_cls) {
    throw ShapeError("detection_loss: label count does not match probability rows");
  }
  if (batch.predicted_targets.shape() != batch.groundtruth_targets.shape()) {
    throw ShapeError("detection_loss: predicted and groundtruth targets differ in shape");
  }
  DetectionLoss out;
  out.grad_probabilities = Tensor(p.shape());
  out.grad_targets = Tensor(batch.predicted_targets.shape());
  if (n_cls > 0) {
    const double inv = 1.0 / static_cast<double>(n_cls);
    for (std::size_t i = 0; i < n_cls; ++i) {
      const std::size_t label = batch.labels[i];
      if (label >= classes) throw UsageError("detection_loss: label out of range");
      const double pi = p[i * classes + label];
      if (!(pi > 0.0)) throw NumericError("detection_loss: non-positive label probability");
      out.classification -= std::log(pi) * inv;
      out.grad_probabilities[i * classes + label] = -inv / pi;
    }
  }
  const Tensor& t = batch.predicted_targets;
  const std::size_t n_reg = t.rank() == 0 ? 0 : t.dim(0);
  if (n_reg > 0) {
    const double inv = 1.0 / static_cast<double>(n_reg);
    auto r = smooth_l1(t.data(), batch.groundtruth_targets.data());
    out.regression = r.loss * inv;
    for (std::size_t k = 0; k < t.numel(); ++k) {
      out.grad_targets[k] = batch.reg_weight * inv * r.grad[k];
    }
  }
  out.total = out.classification + batch.reg_weight * out.regression;
  return out;
}

}  // namespace losses

namespace ag {

Var softmax_cross_entropy(Tape& tape, Var logits, const std::vector<std::size_t>& labels) {
  losses::LossAndGrad r = losses::softmax_cross_entropy(tape.value(logits), labels);
  auto grad = std::make_shared<Tensor>(std::move(r.grad));
  return tape.record(
      Tensor({1}, {r.loss}), {logits},
      [=](Tape& t, const Tensor& g) {
        Tensor gl = *grad;
        gl *= g[0];
        t.accumulate(logits, std::move(gl));
      },
      "softmax_cross_entropy");
}

Var smooth_l1(Tape& tape, Var pred, const Tensor& target) {
  const Tensor& x = tape.value(pred);
  if (x.shape() != target.shape()) {
    throw ShapeError("smooth_l1: prediction shape " + shape_str(x.shape()) +
                     " vs target shape " + shape_str(target.shape()));
  }
  losses::LossAndGrad r = losses::smooth_l1(x.data(), target.data());
  auto grad = std::make_shared<Tensor>(r.grad.reshaped(x.shape()));
  return tape.record(
      Tensor({1}, {r.loss}), {pred},
      [=](Tape& t, const Tensor& g) {
        Tensor gp = *grad;
        gp *= g[0];
        t.accumulate(pred, std::move(gp));
      },
      "smooth_l1");
}

Var detection_loss(Tape& tape, Var cls_logits, const std::vector<std::size_t>& labels,
                   Var reg_pred, const Tensor& reg_target, double reg_weight) {
  Var cls = softmax_cross_entropy(tape, cls_logits, labels);
  const Tensor& pred = tape.value(reg_pred);
  if (pred.numel() == 0 || reg_weight == 0.0) {
    return weighted_sum(tape, {cls}, {1.0});
  }
  Var reg = smooth_l1(tape, reg_pred, reg_target);
  const double n_reg = static_cast<double>(pred.dim(0));
  return weighted_sum(tape, {cls, reg}, {1.0, reg_weight / n_reg});
}

}  // namespace ag
}  // namespace hcn

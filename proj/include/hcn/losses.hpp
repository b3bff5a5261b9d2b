// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hcn/autograd.hpp"
#include "hcn/tensor.hpp"

namespace hcn {
namespace losses {

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;
};

// Mean over rows of -log softmax(logits)[label]. grad = (softmax - onehot)/B.
LossAndGrad softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

// f(d) = 0.5 d^2 if |d| < 1, |d| - 0.5 otherwise.
double smooth_l1_value(double residual);
double smooth_l1_derivative(double residual);
// Sum of f(pred - target) over all elements; grad w.r.t. pred.
LossAndGrad smooth_l1(std::span<const double> pred, std::span<const double> target);

// One batch of anchors or proposals for the joint detection objective:
//   L = 1/N_cls sum_i L_cls(p_i, p*_i) + lambda/N_reg sum_i L_reg(t_i, t*_i)
// with L_cls the negative log-probability of the label and L_reg smooth L1.
struct DetectionLossBatch {
  Tensor probabilities;              // [N_cls, classes]
  std::vector<std::size_t> labels;   // N_cls labels
  Tensor predicted_targets;          // [N_reg, 2] (t_x, t_w), positives only
  Tensor groundtruth_targets;        // [N_reg, 2]
  double reg_weight = 1.0;           // lambda
};

struct DetectionLoss {
  double total = 0.0;
  double classification = 0.0;  // 1/N_cls sum L_cls
  double regression = 0.0;      // 1/N_reg sum L_reg, before lambda
  Tensor grad_probabilities;
  Tensor grad_targets;
};

DetectionLoss detection_loss(const DetectionLossBatch& batch);

}  // namespace losses

namespace ag {

Var softmax_cross_entropy(Tape& tape, Var logits, const std::vector<std::size_t>& labels);
// Sum over elements of smooth-L1(pred - target); target is a constant.
Var smooth_l1(Tape& tape, Var pred, const Tensor& target);
// Logit-space form of the joint detection objective. `reg_pred` holds the
// rows of positive samples only; when it has no rows the regression term is 0.
Var detection_loss(Tape& tape, Var cls_logits, const std::vector<std::size_t>& labels,
                   Var reg_pred, const Tensor& reg_target, double reg_weight);

}  // namespace ag
}  // namespace hcn

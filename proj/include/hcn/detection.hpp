// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// Temporal action detection on untrimmed skeleton sequences.
//
// The backbone is the recognition network up to conv5 (ReLU and pooling
// included), run at the native sequence length with persons merged by an
// element-wise max. Its [C5, T', W'] output is flattened to C5*W' channels
// over T' positions. A proposal subnetwork scores and regresses one anchor
// per (position, scale); proposals are cropped from the same feature map and
// resized to a fixed length for the classification subnetwork, which also
// refines the window.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hcn/model.hpp"
#include "hcn/optim.hpp"
#include "hcn/skeleton.hpp"
#include "hcn/train.hpp"

namespace hcn {

struct TemporalWindow {
  double center = 0.0;
  double length = 0.0;
  double score = 0.0;
  std::optional<std::size_t> class_id;

  double start() const { return center - 0.5 * length; }
  double end() const { return center + 0.5 * length; }
  static TemporalWindow from_bounds(double start, double end);
};

struct RegressionTarget {
  double tx = 0.0;
  double tw = 0.0;
};

// tx = (x - xa) / wa, tw = log(w / wa). UsageError on non-positive lengths.
RegressionTarget encode_window(const TemporalWindow& window, const TemporalWindow& anchor);
TemporalWindow decode_window(const RegressionTarget& target, const TemporalWindow& anchor);

double temporal_iou(const TemporalWindow& a, const TemporalWindow& b);

struct AnchorSet {
  std::vector<double> scales;
  double stride = 1.0;
  std::size_t positions = 0;
  // Index position * scales.size() + scale.
  std::vector<TemporalWindow> windows;
};

// One anchor per (position, scale) with centers (position + 0.5) * stride
// for positions 0 .. floor(T / stride) - 1 (at least one position).
AnchorSet generate_anchors(std::size_t frames, double stride, const std::vector<double>& scales);

enum class AnchorLabel { kNegative = 0, kPositive = 1, kIgnore = -1 };

struct AnchorAssignment {
  std::vector<AnchorLabel> labels;
  std::vector<RegressionTarget> targets;  // valid for positives
  std::vector<std::size_t> matched;       // best groundtruth index, valid for positives
};

AnchorAssignment assign_anchor_labels(const std::vector<TemporalWindow>& anchors,
                                      const std::vector<TemporalWindow>& groundtruth,
                                      double pos_iou = 0.7, double neg_iou = 0.3);

// Linear resampling of the span [start, end) (feature-map units, clipped to
// [0, T']) of a [C, T', ...] tensor to out_len bins. Bin k samples position
// start + (k + 0.5) (end - start) / out_len - 0.5, clamped to [0, T' - 1].
Tensor crop_and_resize_temporal(const Tensor& features, double start, double end,
                                std::size_t out_len);

namespace ag {
// features [1, C, T', W] -> [R, C, out_len, W], one slice per window.
Var crop_and_resize_temporal(Tape& tape, Var features,
                             const std::vector<std::pair<double, double>>& spans,
                             std::size_t out_len);
}  // namespace ag

// Greedy suppression by descending score (ties by ascending start) of
// windows whose IoU with a kept window exceeds iou_threshold.
std::vector<TemporalWindow> nms_temporal(std::vector<TemporalWindow> windows,
                                         double iou_threshold);

struct DetectionConfig {
  ModelConfig backbone = default_backbone();
  std::size_t classes = 3;
  std::vector<double> scales{50, 100, 200, 400};
  double pos_iou = 0.7;
  double neg_iou = 0.3;
  std::size_t anchor_batch = 64;
  double positive_fraction = 0.5;
  std::size_t pre_nms_top = 100;
  std::size_t post_nms_top = 20;
  double proposal_nms = 0.7;
  double final_nms = 0.5;
  double head_fg_iou = 0.5;
  double min_score = 0.01;
  std::size_t crop_len = 8;
  std::size_t rpn_channels = 64;
  std::size_t head_hidden = 128;
  double reg_weight = 1.0;

  static ModelConfig default_backbone();
  void validate() const;
  // Input frames per conv5 position.
  double stride() const;
};

struct DetectionModel {
  DetectionConfig config;
  HcnModel backbone;  // stream layers, conv5, rpn.* and head.* parameters
};

DetectionModel build_detection_model(const DetectionConfig& config, Rng& rng);

struct DetectionLossParts {
  double total = 0.0;
  double rpn = 0.0;
  double head = 0.0;
};

// One training step on one sequence: forward, backward, Adam.
DetectionLossParts detection_train_step(DetectionModel& model, const SkeletonSequence& seq,
                                        TrainState& state, Rng& rng);

// Detected windows with class and score, clipped to [0, T]. Empty when the
// sequence is shorter than the smallest anchor scale.
std::vector<TemporalWindow> detect(DetectionModel& model, const SkeletonSequence& seq);

struct MapResult {
  std::map<std::size_t, double> average_precision;  // classes present in groundtruth
  double map = 0.0;
};

// Detections are keyed by sequence id; groundtruth is a list of sequences
// with segments. DataError when the groundtruth holds no segments.
MapResult evaluate_map(const std::map<std::string, std::vector<TemporalWindow>>& detections,
                       const Dataset& groundtruth, double iou_threshold = 0.5);

struct DetectionSchedule {
  std::uint64_t total_steps = 2000;
  std::uint64_t eval_every = 500;
};

// Cycles the sequences in a seeded order; evaluation rows report loss
// (running mean) in the "train" row and mAP on `val` in the "val" row.
MetricsHistory train_detection(DetectionModel& model, const Dataset& train, const Dataset& val,
                               TrainState& state, const DetectionSchedule& schedule,
                               const TrainHooks& hooks = {});

// JSON Lines of {"sequence_id", "start", "end", "class", "score"}.
std::string detections_jsonl(const std::map<std::string, std::vector<TemporalWindow>>& detections);

}  // namespace hcn

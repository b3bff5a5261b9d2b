// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stream hierarchical co-occurrence network.
//
// Each stream (raw coordinates, motion) runs
//   conv1 (1x1) -> ReLU -> conv2 (n x 1) -> transpose -> conv3 -> conv4
// on a [batch, coords, frames, joints] tensor. The kernel extent along the
// joint axis is 1 in conv1/conv2, so stage 1 encodes each joint on its own.
// The transpose swaps the channel and joint axes, so conv3 onwards sees the
// joints as input channels and aggregates over all of them at once.
// The streams are concatenated along channels, then
//   conv5 -> ReLU -> conv6 -> ReLU -> [person fusion] -> fc7 -> ReLU -> fc8.
//
// The local variant prepends the same transpose before conv1, which keeps
// the joints on a spatial axis for the rest of the network.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hcn/autograd.hpp"
#include "hcn/ops.hpp"
#include "hcn/skeleton.hpp"
#include "hcn/tensor.hpp"

namespace hcn {

enum class FusionMode { kEarly, kLateMean, kLateConcat, kLateMax };
enum class Variant { kGlobal, kLocal };

std::string to_string(FusionMode mode);
std::string to_string(Variant variant);
FusionMode parse_fusion_mode(const std::string& text);
Variant parse_variant(const std::string& text);

struct ChannelConfig {
  std::size_t conv1 = 64;
  std::size_t conv2 = 32;
  std::size_t conv3 = 32;
  std::size_t conv4 = 64;
  std::size_t conv5 = 128;
  std::size_t conv6 = 256;
  std::size_t fc7 = 256;
};

// Which conv layers are followed by a stride-2 max pool.
struct PoolConfig {
  bool conv3 = true;
  bool conv4 = true;
  bool conv5 = true;
  bool conv6 = true;
};

struct ModelConfig {
  std::size_t joints = 25;
  std::size_t coords = 3;
  std::size_t frames = 32;
  std::size_t classes = 60;
  ChannelConfig channels;
  PoolConfig pools;
  std::size_t temporal_kernel = 3;
  std::size_t spatial_kernel = 3;
  double dropout = 0.5;
  std::size_t max_persons = 2;
  FusionMode fusion = FusionMode::kLateMax;
  Variant variant = Variant::kGlobal;
  bool include_conv4 = true;

  // 25 joints, 60 classes, 32 frames, two persons.
  static ModelConfig ntu();
  // Reduced channels, no conv4, 16 frames, 15 joints, 8 classes.
  static ModelConfig sbu();

  // Throws UsageError on invalid values or infeasible pooling.
  void validate() const;
};

// Tensor extents at the points of the network that vary with the config.
struct Geometry {
  std::size_t stream_batch_factor = 1;  // persons folded into the batch axis
  std::size_t input_joints = 0;         // joints per stream input (persons stacked when early)
  std::size_t conv1_in = 0;
  std::size_t stage1_width = 0;         // spatial width entering conv1
  std::size_t conv3_in = 0;
  std::size_t stage2_width = 0;         // spatial width entering conv3 (= conv2 channels)
  std::size_t stream_out_channels = 0;  // conv4 (or conv3) channels
  std::size_t conv6_h = 0;              // after conv6 (+pool)
  std::size_t conv6_w = 0;
  std::size_t fc7_in = 0;
};

Geometry compute_geometry(const ModelConfig& config);

// Pool window used after a layer whose input has the given extents.
ops::PoolWindow pool_window_for(std::size_t height, std::size_t width);

struct HcnModel {
  ModelConfig config;
  Geometry geometry;
  ParameterStore params;
};

// Registers and initializes all parameters: He-uniform over fan-in for conv
// and dense weights, zero biases. Deterministic given the rng state.
HcnModel build_model(const ModelConfig& config, Rng& rng);

// Only the two streams and conv5, for the detection backbone.
HcnModel build_backbone(const ModelConfig& config, Rng& rng);

struct LayerSpecs {
  ops::ConvSpec conv1, conv2, conv3, conv4, conv5, conv6;
};
LayerSpecs layer_specs(const ModelConfig& config, const Geometry& geometry);

// Registers a conv layer "<name>.weight"/"<name>.bias" or a dense layer with
// the model's initialization.
void add_conv_params(ParameterStore& store, const std::string& name, const ops::ConvSpec& spec,
                     Rng& rng);
void add_dense_params(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng);

// Stream inputs, each [batch, persons, frames, joints, coords].
struct Batch {
  Tensor raw;
  Tensor motion;
};

struct FeatureMaps {
  Var raw_conv2;     // [B*, conv2, frames, width] before the transpose
  Var motion_conv2;
  Var raw_conv3;
  Var motion_conv3;
  Var raw_conv4;     // stream outputs prior to the stream concat
  Var motion_conv4;
  Var conv5;
  Var conv6;         // per person, before person fusion
};

struct ForwardResult {
  Var logits;
  FeatureMaps features;
};

ForwardResult forward(HcnModel& model, Tape& tape, const Batch& batch, ops::Mode mode, Rng& rng);

// Eval-mode logits without keeping the tape.
Tensor predict_logits(HcnModel& model, const Batch& batch);

// Applies the configured person fusion to conv6-level features
// [batch*persons, C, H, W] (persons contiguous). Early fusion is a no-op.
Var fuse_persons(Tape& tape, Var per_person, std::size_t persons, FusionMode mode);

// Convenience form merging a list of per-person feature maps [C, H, W]
// (or any identical shapes) into one tensor.
Tensor fuse_persons(const std::vector<Tensor>& per_person, FusionMode mode);

// Class probabilities of one sequence after eval-mode preprocessing.
std::vector<double> predict(HcnModel& model, const SkeletonSequence& seq);

// Closed-form parameter count of a config.
std::size_t expected_parameter_count(const ModelConfig& config);

// Stacks preprocessed samples into a batch (all with the same person count).
Batch make_batch(const std::vector<SampleTensors>& samples);

// Stream sub-network shared by recognition and detection: returns the
// stream's conv4 (or conv3 without conv4) output for an input
// [B', frames, joints', coords]. `prefix` selects the parameter set.
struct StreamOutput {
  Var conv2;
  Var conv3;
  Var out;
};
StreamOutput stream_forward(HcnModel& model, Tape& tape, Var input, const std::string& prefix);

// Arranges [B, P, T, N, D] for the stream sub-network: folds persons into the
// batch for late fusion or stacks them along the joint axis for early fusion.
Var arrange_persons(Tape& tape, Var input, FusionMode mode);

}  // namespace hcn

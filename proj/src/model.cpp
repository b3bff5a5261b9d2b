// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hcn/error.hpp"

namespace hcn {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kEarly:
      return "early";
    case FusionMode::kLateMean:
      return "late_mean";
    case FusionMode::kLateConcat:
      return "late_concat";
    case FusionMode::kLateMax:
      return "late_max";
  }
  return "?";
}

std::string to_string(Variant variant) {
  return variant == Variant::kGlobal ? "global" : "local";
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "early") return FusionMode::kEarly;
  if (text == "late_mean") return FusionMode::kLateMean;
  if (text == "late_concat") return FusionMode::kLateConcat;
  if (text == "late_max") return FusionMode::kLateMax;
  throw UsageError("unknown fusion mode '" + text +
                   "' (expected early, late_mean, late_concat or late_max)");
}

Variant parse_variant(const std::string& text) {
  if (text == "global") return Variant::kGlobal;
  if (text == "local") return Variant::kLocal;
  throw UsageError("unknown model variant '" + text + "' (expected global or local)");
}

ModelConfig ModelConfig::ntu() { return ModelConfig{}; }

ModelConfig ModelConfig::sbu() {
  ModelConfig c;
  c.joints = 15;
  c.classes = 8;
  c.frames = 16;
  c.channels = ChannelConfig{32, 16, 16, 0, 32, 64, 64};
  c.include_conv4 = false;
  c.pools.conv4 = false;
  return c;
}

ops::PoolWindow pool_window_for(std::size_t height, std::size_t width) {
  (void)height;
  return ops::PoolWindow{2, width >= 2 ? std::size_t{2} : std::size_t{1}};
}

namespace {

struct Extent {
  std::size_t h;
  std::size_t w;
};

void apply_pool(Extent& e, bool pooled, const char* layer) {
  if (!pooled) return;
  if (e.h < 2) {
    throw UsageError(std::string("pooling after ") + layer +
                     " needs at least 2 frames, the config leaves " + std::to_string(e.h));
  }
  const ops::PoolWindow win = pool_window_for(e.h, e.w);
  e.h /= win.h;
  e.w /= win.w;
}

}  // namespace

Geometry compute_geometry(const ModelConfig& c) {
  Geometry g;
  const bool early = c.fusion == FusionMode::kEarly;
  g.stream_batch_factor = early ? 1 : c.max_persons;
  g.input_joints = early ? c.max_persons * c.joints : c.joints;
  if (c.variant == Variant::kGlobal) {
    g.conv1_in = c.coords;
    g.stage1_width = g.input_joints;
    g.conv3_in = g.input_joints;
  } else {
    g.conv1_in = g.input_joints;
    g.stage1_width = c.coords;
    g.conv3_in = c.coords;
  }
  g.stage2_width = c.channels.conv2;
  Extent e{c.frames, g.stage2_width};
  apply_pool(e, c.pools.conv3, "conv3");
  if (c.include_conv4) apply_pool(e, c.pools.conv4, "conv4");
  g.stream_out_channels = c.include_conv4 ? c.channels.conv4 : c.channels.conv3;
  apply_pool(e, c.pools.conv5, "conv5");
  apply_pool(e, c.pools.conv6, "conv6");
  g.conv6_h = e.h;
  g.conv6_w = e.w;
  g.fc7_in = c.channels.conv6 * e.h * e.w *
             (c.fusion == FusionMode::kLateConcat ? c.max_persons : 1);
  return g;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw UsageError(std::string("model config: ") + name + " must be >= 1");
  };
  positive(joints, "joints");
  positive(coords, "coords");
  positive(frames, "frames");
  positive(classes, "classes");
  positive(max_persons, "max_persons");
  positive(channels.conv1, "channels.conv1");
  positive(channels.conv2, "channels.conv2");
  positive(channels.conv3, "channels.conv3");
  if (include_conv4) positive(channels.conv4, "channels.conv4");
  positive(channels.conv5, "channels.conv5");
  positive(channels.conv6, "channels.conv6");
  positive(channels.fc7, "channels.fc7");
  if (temporal_kernel % 2 == 0 || spatial_kernel % 2 == 0) {
    throw UsageError("model config: kernel extents must be odd");
  }
  ops::validate_dropout_ratio(dropout);
  const Geometry g = compute_geometry(*this);
  if (g.fc7_in == 0) throw UsageError("model config: pooling leaves an empty feature map");
}

void add_conv_params(ParameterStore& store, const std::string& name, const ops::ConvSpec& spec,
                     Rng& rng) {
  Parameter& w = store.add(name + ".weight", spec.weight_shape());
  store.add(name + ".bias", {spec.out_channels});
  const double fan_in = static_cast<double>(spec.in_channels * spec.kernel_h * spec.kernel_w);
  std::uniform_real_distribution<double> u(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
  for (double& v : w.value.data()) v = u(rng);
}

void add_dense_params(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng) {
  Parameter& w = store.add(name + ".weight", {out, in});
  store.add(name + ".bias", {out});
  std::uniform_real_distribution<double> u(-std::sqrt(6.0 / static_cast<double>(in)),
                                           std::sqrt(6.0 / static_cast<double>(in)));
  for (double& v : w.value.data()) v = u(rng);
}

LayerSpecs layer_specs(const ModelConfig& c, const Geometry& g) {
  const std::size_t n = c.temporal_kernel, s = c.spatial_kernel;
  LayerSpecs l;
  l.conv1 = {1, 1, g.conv1_in, c.channels.conv1};
  l.conv2 = {n, 1, c.channels.conv1, c.channels.conv2};
  l.conv3 = {n, s, g.conv3_in, c.channels.conv3};
  l.conv4 = {n, s, c.channels.conv3, std::max<std::size_t>(c.channels.conv4, 1)};
  l.conv5 = {n, s, 2 * g.stream_out_channels, c.channels.conv5};
  l.conv6 = {n, s, c.channels.conv5, c.channels.conv6};
  return l;
}

namespace {

std::size_t conv_count(const ops::ConvSpec& s) {
  return s.out_channels * s.in_channels * s.kernel_h * s.kernel_w + s.out_channels;
}

Var param(Tape& tape, HcnModel& m, const std::string& name) {
  return tape.parameter(m.params.get(name));
}

Var conv(Tape& tape, HcnModel& m, Var x, const std::string& name, const ops::ConvSpec& spec) {
  return ag::conv2d(tape, x, param(tape, m, name + ".weight"), param(tape, m, name + ".bias"),
                    spec);
}

Var maybe_pool(Tape& tape, Var x, bool pooled) {
  if (!pooled) return x;
  const Tensor& v = tape.value(x);
  return ag::maxpool2d(tape, x, pool_window_for(v.dim(2), v.dim(3)));
}

}  // namespace

std::size_t expected_parameter_count(const ModelConfig& c) {
  const Geometry g = compute_geometry(c);
  const LayerSpecs l = layer_specs(c, g);
  std::size_t stream = conv_count(l.conv1) + conv_count(l.conv2) + conv_count(l.conv3);
  if (c.include_conv4) stream += conv_count(l.conv4);
  return 2 * stream + conv_count(l.conv5) + conv_count(l.conv6) +
         (g.fc7_in * c.channels.fc7 + c.channels.fc7) + (c.channels.fc7 * c.classes + c.classes);
}

namespace {

HcnModel build_layers(const ModelConfig& config, Rng& rng, bool classifier) {
  config.validate();
  HcnModel m;
  m.config = config;
  m.geometry = compute_geometry(config);
  const LayerSpecs l = layer_specs(config, m.geometry);
  for (const char* stream : {"raw", "motion"}) {
    const std::string p = stream;
    add_conv_params(m.params, p + ".conv1", l.conv1, rng);
    add_conv_params(m.params, p + ".conv2", l.conv2, rng);
    add_conv_params(m.params, p + ".conv3", l.conv3, rng);
    if (config.include_conv4) add_conv_params(m.params, p + ".conv4", l.conv4, rng);
  }
  add_conv_params(m.params, "conv5", l.conv5, rng);
  if (!classifier) return m;
  add_conv_params(m.params, "conv6", l.conv6, rng);
  add_dense_params(m.params, "fc7", m.geometry.fc7_in, config.channels.fc7, rng);
  add_dense_params(m.params, "fc8", config.channels.fc7, config.classes, rng);
  return m;
}

}  // namespace

HcnModel build_model(const ModelConfig& config, Rng& rng) {
  return build_layers(config, rng, true);
}

HcnModel build_backbone(const ModelConfig& config, Rng& rng) {
  return build_layers(config, rng, false);
}

Var arrange_persons(Tape& tape, Var input, FusionMode mode) {
  const Tensor& x = tape.value(input);
  if (x.rank() != 5) {
    throw ShapeError("stream input must be [batch, persons, frames, joints, coords], got " +
                     shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0), p = x.dim(1), t = x.dim(2), n = x.dim(3), d = x.dim(4);
  if (mode == FusionMode::kEarly) {
    Var stacked = ag::permute(tape, input, {0, 2, 1, 3, 4});
    return ag::reshape(tape, stacked, {b, t, p * n, d});
  }
  return ag::reshape(tape, input, {b * p, t, n, d});
}

StreamOutput stream_forward(HcnModel& m, Tape& tape, Var input, const std::string& prefix) {
  const ModelConfig& c = m.config;
  const LayerSpecs l = layer_specs(c, m.geometry);
  const Tensor& in = tape.value(input);
  const std::size_t expected_joints = m.geometry.input_joints;
  if (in.rank() != 4 || in.dim(2) != expected_joints || in.dim(3) != c.coords) {
    throw ShapeError("stream input " + shape_str(in.shape()) + " does not match model (joints " +
                     std::to_string(expected_joints) + ", coords " + std::to_string(c.coords) +
                     ")");
  }
  // [B, T, N, D] -> [B, D, T, N]: coordinates are the channels.
  Var x = ag::permute(tape, input, {0, 3, 1, 2});
  if (c.variant == Variant::kLocal) x = ag::permute(tape, x, {0, 3, 2, 1});
  x = ag::relu(tape, conv(tape, m, x, prefix + ".conv1", l.conv1));
  StreamOutput out;
  out.conv2 = conv(tape, m, x, prefix + ".conv2", l.conv2);
  // Swap channels and joints: [B, C2, T, N] -> [B, N, T, C2].
  x = ag::permute(tape, out.conv2, {0, 3, 2, 1});
  out.conv3 = maybe_pool(tape, conv(tape, m, x, prefix + ".conv3", l.conv3), c.pools.conv3);
  out.out = out.conv3;
  if (c.include_conv4) {
    out.out = maybe_pool(tape, conv(tape, m, out.conv3, prefix + ".conv4", l.conv4),
                         c.pools.conv4);
  }
  return out;
}

Var fuse_persons(Tape& tape, Var per_person, std::size_t persons, FusionMode mode) {
  switch (mode) {
    case FusionMode::kEarly:
      return per_person;
    case FusionMode::kLateMax:
      return ag::group_max(tape, per_person, persons);
    case FusionMode::kLateMean:
      return ag::group_mean(tape, per_person, persons);
    case FusionMode::kLateConcat:
      return ag::group_concat(tape, per_person, persons);
  }
  throw UsageError("unknown fusion mode");
}

Tensor fuse_persons(const std::vector<Tensor>& per_person, FusionMode mode) {
  if (mode == FusionMode::kEarly) {
    throw UsageError("fuse_persons: early fusion stacks persons at the input, not at conv6");
  }
  if (per_person.empty()) throw UsageError("fuse_persons: need at least one person");
  Tape tape;
  Tensor stacked = stack_persons(per_person);
  Var v = fuse_persons(tape, tape.constant(std::move(stacked)), per_person.size(), mode);
  const Tensor& fused = tape.value(v);
  Shape shape(fused.shape().begin() + 1, fused.shape().end());
  return fused.reshaped(std::move(shape));
}

ForwardResult forward(HcnModel& m, Tape& tape, const Batch& batch, ops::Mode mode, Rng& rng) {
  const ModelConfig& c = m.config;
  if (batch.raw.shape() != batch.motion.shape() || batch.raw.rank() != 5) {
    throw ShapeError("batch raw " + shape_str(batch.raw.shape()) + " and motion " +
                     shape_str(batch.motion.shape()) + " must be equal rank-5 shapes");
  }
  const std::size_t batch_size = batch.raw.dim(0), persons = batch.raw.dim(1);
  if (persons == 0) throw ShapeError("batch has no persons");
  const bool fixed_persons =
      c.fusion == FusionMode::kEarly || c.fusion == FusionMode::kLateConcat;
  if (fixed_persons ? persons != c.max_persons : persons > c.max_persons) {
    throw ShapeError("batch has " + std::to_string(persons) + " persons; fusion mode " +
                     to_string(c.fusion) + " with max_persons " + std::to_string(c.max_persons) +
                     (fixed_persons ? " requires exactly that many" : " allows at most that many"));
  }
  if (batch.raw.dim(2) != c.frames) {
    throw ShapeError("batch has " + std::to_string(batch.raw.dim(2)) + " frames, model expects " +
                     std::to_string(c.frames));
  }
  const LayerSpecs l = layer_specs(c, m.geometry);

  Var raw = arrange_persons(tape, tape.constant(batch.raw), c.fusion);
  Var motion = arrange_persons(tape, tape.constant(batch.motion), c.fusion);
  ForwardResult r;
  StreamOutput sr = stream_forward(m, tape, raw, "raw");
  StreamOutput sm = stream_forward(m, tape, motion, "motion");
  r.features.raw_conv2 = sr.conv2;
  r.features.motion_conv2 = sm.conv2;
  r.features.raw_conv3 = sr.conv3;
  r.features.motion_conv3 = sm.conv3;
  r.features.raw_conv4 = sr.out;
  r.features.motion_conv4 = sm.out;

  Var x = ag::dropout(tape, ag::concat_channels(tape, sr.out, sm.out), c.dropout, mode, rng);
  x = maybe_pool(tape, ag::relu(tape, conv(tape, m, x, "conv5", l.conv5)), c.pools.conv5);
  r.features.conv5 = x;
  x = ag::dropout(tape, x, c.dropout, mode, rng);
  x = maybe_pool(tape, ag::relu(tape, conv(tape, m, x, "conv6", l.conv6)), c.pools.conv6);
  r.features.conv6 = x;
  if (c.fusion != FusionMode::kEarly) x = fuse_persons(tape, x, persons, c.fusion);
  x = ag::dropout(tape, x, c.dropout, mode, rng);
  const Tensor& fused = tape.value(x);
  x = ag::reshape(tape, x, {batch_size, fused.numel() / batch_size});
  x = ag::relu(tape, ag::dense(tape, x, param(tape, m, "fc7.weight"), param(tape, m, "fc7.bias")));
  x = ag::dropout(tape, x, c.dropout, mode, rng);
  r.logits = ag::dense(tape, x, param(tape, m, "fc8.weight"), param(tape, m, "fc8.bias"));
  return r;
}

Tensor predict_logits(HcnModel& model, const Batch& batch) {
  Tape tape;
  Rng unused(0);
  ForwardResult r = forward(model, tape, batch, ops::Mode::kEval, unused);
  return tape.value(r.logits);
}

Batch make_batch(const std::vector<SampleTensors>& samples) {
  if (samples.empty()) throw UsageError("make_batch: empty batch");
  const Shape& ref = samples.front().raw.shape();
  Shape shape = ref;
  shape.insert(shape.begin(), samples.size());
  Batch b{Tensor(shape), Tensor(shape)};
  const std::size_t block = samples.front().raw.numel();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].raw.shape() != ref || samples[i].motion.shape() != ref) {
      throw ShapeError("make_batch: sample " + std::to_string(i) + " has shape " +
                       shape_str(samples[i].raw.shape()) + ", expected " + shape_str(ref));
    }
    std::copy_n(samples[i].raw.raw(), block, b.raw.raw() + i * block);
    std::copy_n(samples[i].motion.raw(), block, b.motion.raw() + i * block);
  }
  return b;
}

std::vector<double> predict(HcnModel& model, const SkeletonSequence& seq) {
  const ModelConfig& c = model.config;
  PreprocessOptions opts;
  opts.frames = c.frames;
  opts.max_persons = c.max_persons;
  opts.pad = c.fusion == FusionMode::kEarly || c.fusion == FusionMode::kLateConcat;
  Rng unused(0);
  SampleTensors s = preprocess(seq, opts, ops::Mode::kEval, unused);
  Tensor probs = ops::softmax(predict_logits(model, make_batch({s})));
  return probs.values();
}

}  // namespace hcn

// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "json.hpp"

#include "hcn/error.hpp"
#include "hcn/losses.hpp"

namespace hcn {

TemporalWindow TemporalWindow::from_bounds(double start, double end) {
  TemporalWindow w;
  w.center = 0.5 * (start + end);
  w.length = end - start;
  return w;
}

RegressionTarget encode_window(const TemporalWindow& window, const TemporalWindow& anchor) {
  if (!(anchor.length > 0.0) || !(window.length > 0.0)) {
    throw UsageError("encode_window: window and anchor lengths must be positive");
  }
  return {(window.center - anchor.center) / anchor.length, std::log(window.length / anchor.length)};
}

TemporalWindow decode_window(const RegressionTarget& target, const TemporalWindow& anchor) {
  if (!(anchor.length > 0.0)) throw UsageError("decode_window: anchor length must be positive");
  TemporalWindow w;
  w.center = target.tx * anchor.length + anchor.center;
  w.length = anchor.length * std::exp(target.tw);
  return w;
}

double temporal_iou(const TemporalWindow& a, const TemporalWindow& b) {
  const double inter = std::max(0.0, std::min(a.end(), b.end()) - std::max(a.start(), b.start()));
  const double uni = a.length + b.length - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

AnchorSet generate_anchors(std::size_t frames, double stride, const std::vector<double>& scales) {
  if (frames == 0) throw UsageError("generate_anchors: sequence needs at least one frame");
  if (!(stride > 0.0)) throw UsageError("generate_anchors: stride must be positive");
  AnchorSet set;
  set.scales = scales;
  set.stride = stride;
  set.positions = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(static_cast<double>(frames) / stride)));
  set.windows.reserve(set.positions * scales.size());
  for (std::size_t p = 0; p < set.positions; ++p) {
    for (double s : scales) {
      TemporalWindow w;
      w.center = (static_cast<double>(p) + 0.5) * stride;
      w.length = s;
      set.windows.push_back(w);
    }
  }
  return set;
}

AnchorAssignment assign_anchor_labels(const std::vector<TemporalWindow>& anchors,
                                      const std::vector<TemporalWindow>& groundtruth,
                                      double pos_iou, double neg_iou) {
  if (anchors.empty()) throw UsageError("assign_anchor_labels: empty anchor set");
  AnchorAssignment out;
  out.labels.assign(anchors.size(), AnchorLabel::kNegative);
  out.targets.assign(anchors.size(), RegressionTarget{});
  out.matched.assign(anchors.size(), 0);
  if (groundtruth.empty()) return out;

  std::vector<double> best_for_gt(groundtruth.size(), 0.0);
  std::vector<double> best_iou(anchors.size(), 0.0);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t g = 0; g < groundtruth.size(); ++g) {
      const double iou = temporal_iou(anchors[a], groundtruth[g]);
      if (iou > best_iou[a]) {
        best_iou[a] = iou;
        out.matched[a] = g;
      }
      best_for_gt[g] = std::max(best_for_gt[g], iou);
    }
  }
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    bool positive = best_iou[a] >= pos_iou;
    for (std::size_t g = 0; g < groundtruth.size() && !positive; ++g) {
      const double iou = temporal_iou(anchors[a], groundtruth[g]);
      if (best_for_gt[g] > 0.0 && iou == best_for_gt[g]) {
        positive = true;
        out.matched[a] = g;
      }
    }
    if (positive) {
      out.labels[a] = AnchorLabel::kPositive;
      out.targets[a] = encode_window(groundtruth[out.matched[a]], anchors[a]);
    } else if (best_iou[a] > neg_iou) {
      out.labels[a] = AnchorLabel::kIgnore;
    }
  }
  return out;
}

namespace {

struct CropPlan {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

CropPlan plan_crop(std::size_t extent, double start, double end, std::size_t out_len) {
  if (extent == 0) throw ShapeError("crop_and_resize: empty temporal axis");
  if (out_len == 0) throw UsageError("crop_and_resize: out_len must be >= 1");
  const double T = static_cast<double>(extent);
  const double s = std::clamp(start, 0.0, T), e = std::clamp(end, 0.0, T);
  if (!(e > s)) {
    throw UsageError("crop_and_resize: proposal [" + std::to_string(start) + ", " +
                     std::to_string(end) + ") lies outside the feature map [0, " +
                     std::to_string(extent) + ")");
  }
  CropPlan plan;
  for (std::size_t k = 0; k < out_len; ++k) {
    double u = s + (static_cast<double>(k) + 0.5) * (e - s) / static_cast<double>(out_len) - 0.5;
    u = std::clamp(u, 0.0, T - 1.0);
    const auto i0 = static_cast<std::size_t>(std::floor(u));
    plan.lo.push_back(i0);
    plan.hi.push_back(std::min(i0 + 1, extent - 1));
    plan.frac.push_back(u - static_cast<double>(i0));
  }
  return plan;
}

// src [C, T', inner] -> dst [C, out_len, inner].
void apply_crop(const CropPlan& plan, const double* src, double* dst, std::size_t channels,
                std::size_t extent, std::size_t inner) {
  const std::size_t out_len = plan.lo.size();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < out_len; ++k) {
      const double* a = src + (c * extent + plan.lo[k]) * inner;
      const double* b = src + (c * extent + plan.hi[k]) * inner;
      double* d = dst + (c * out_len + k) * inner;
      const double f = plan.frac[k];
      for (std::size_t i = 0; i < inner; ++i) d[i] = (1.0 - f) * a[i] + f * b[i];
    }
  }
}

void apply_crop_adjoint(const CropPlan& plan, const double* grad, double* gsrc,
                        std::size_t channels, std::size_t extent, std::size_t inner) {
  const std::size_t out_len = plan.lo.size();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < out_len; ++k) {
      double* a = gsrc + (c * extent + plan.lo[k]) * inner;
      double* b = gsrc + (c * extent + plan.hi[k]) * inner;
      const double* g = grad + (c * out_len + k) * inner;
      const double f = plan.frac[k];
      for (std::size_t i = 0; i < inner; ++i) {
        a[i] += (1.0 - f) * g[i];
        b[i] += f * g[i];
      }
    }
  }
}

}  // namespace

Tensor crop_and_resize_temporal(const Tensor& features, double start, double end,
                                std::size_t out_len) {
  if (features.rank() < 2) {
    throw ShapeError("crop_and_resize: features must be [channels, frames, ...], got " +
                     shape_str(features.shape()));
  }
  const std::size_t channels = features.dim(0), extent = features.dim(1);
  const std::size_t inner = extent == 0 || channels == 0 ? 0 : features.numel() / (channels * extent);
  const CropPlan plan = plan_crop(extent, start, end, out_len);
  Shape shape = features.shape();
  shape[1] = out_len;
  Tensor out(shape);
  apply_crop(plan, features.raw(), out.raw(), channels, extent, inner);
  return out;
}

namespace ag {

Var crop_and_resize_temporal(Tape& tape, Var features,
                             const std::vector<std::pair<double, double>>& spans,
                             std::size_t out_len) {
  const Tensor& x = tape.value(features);
  if (x.rank() != 4 || x.dim(0) != 1) {
    throw ShapeError("crop_and_resize: features must be [1, C, T', W], got " + shape_str(x.shape()));
  }
  const std::size_t channels = x.dim(1), extent = x.dim(2), inner = x.dim(3);
  std::vector<CropPlan> plans;
  plans.reserve(spans.size());
  for (const auto& [s, e] : spans) plans.push_back(plan_crop(extent, s, e, out_len));
  const std::size_t block = channels * out_len * inner;
  Tensor out({spans.size(), channels, out_len, inner});
  for (std::size_t r = 0; r < plans.size(); ++r) {
    apply_crop(plans[r], x.raw(), out.raw() + r * block, channels, extent, inner);
  }
  return tape.record(
      std::move(out), {features},
      [=, plans = std::move(plans)](Tape& t, const Tensor& g) {
        Tensor gi(t.value(features).shape());
        for (std::size_t r = 0; r < plans.size(); ++r) {
          apply_crop_adjoint(plans[r], g.raw() + r * block, gi.raw(), channels, extent, inner);
        }
        t.accumulate(features, std::move(gi));
      },
      "crop_and_resize");
}

}  // namespace ag

std::vector<TemporalWindow> nms_temporal(std::vector<TemporalWindow> windows,
                                         double iou_threshold) {
  std::stable_sort(windows.begin(), windows.end(),
                   [](const TemporalWindow& a, const TemporalWindow& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.start() < b.start();
                   });
  std::vector<TemporalWindow> kept;
  for (const TemporalWindow& w : windows) {
    bool suppressed = false;
    for (const TemporalWindow& k : kept) {
      if (temporal_iou(w, k) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(w);
  }
  return kept;
}

ModelConfig DetectionConfig::default_backbone() {
  ModelConfig c;
  c.joints = 12;
  c.coords = 3;
  c.classes = 3;
  c.channels = ChannelConfig{32, 16, 16, 32, 32, 64, 64};
  c.fusion = FusionMode::kLateMax;
  c.dropout = 0.0;
  return c;
}

double DetectionConfig::stride() const {
  double s = 1.0;
  if (backbone.pools.conv3) s *= 2;
  if (backbone.include_conv4 && backbone.pools.conv4) s *= 2;
  if (backbone.pools.conv5) s *= 2;
  return s;
}

void DetectionConfig::validate() const {
  backbone.validate();
  if (classes == 0) throw UsageError("detection config: classes must be >= 1");
  if (scales.empty()) throw UsageError("detection config: need at least one anchor scale");
  for (double s : scales) {
    if (!(s > 0.0)) throw UsageError("detection config: anchor scales must be positive");
  }
  if (!(neg_iou >= 0.0 && neg_iou <= pos_iou && pos_iou <= 1.0)) {
    throw UsageError("detection config: need 0 <= neg_iou <= pos_iou <= 1");
  }
  if (anchor_batch == 0 || crop_len == 0 || rpn_channels == 0 || head_hidden == 0 ||
      pre_nms_top == 0 || post_nms_top == 0) {
    throw UsageError("detection config: batch, crop and layer sizes must be >= 1");
  }
  if (!(positive_fraction > 0.0 && positive_fraction <= 1.0)) {
    throw UsageError("detection config: positive_fraction must be in (0, 1]");
  }
}

namespace {

std::size_t feature_width(const ModelConfig& c) {
  std::size_t w = c.channels.conv2;
  auto pool = [&](bool on) {
    if (on && w >= 2) w /= 2;
  };
  pool(c.pools.conv3);
  if (c.include_conv4) pool(c.pools.conv4);
  pool(c.pools.conv5);
  return w;
}

std::size_t feature_channels(const DetectionConfig& c) {
  return c.backbone.channels.conv5 * feature_width(c.backbone);
}

// Frames surviving the pooled stages, or 0 when some pool would not fit.
std::size_t feature_positions(const ModelConfig& c, std::size_t frames) {
  std::size_t h = frames;
  auto pool = [&](bool on) {
    if (!on) return;
    h = h >= 2 ? h / 2 : 0;
  };
  pool(c.pools.conv3);
  if (c.include_conv4) pool(c.pools.conv4);
  pool(c.pools.conv5);
  return h;
}

ops::ConvSpec rpn_spec(const DetectionConfig& c) {
  return {3, 1, feature_channels(c), c.rpn_channels};
}
ops::ConvSpec rpn_out_spec(const DetectionConfig& c) {
  return {1, 1, c.rpn_channels, 2 * c.scales.size()};
}

Var param(Tape& tape, HcnModel& m, const std::string& name) {
  return tape.parameter(m.params.get(name));
}

Var conv(Tape& tape, HcnModel& m, Var x, const std::string& name, const ops::ConvSpec& spec) {
  return ag::conv2d(tape, x, param(tape, m, name + ".weight"), param(tape, m, name + ".bias"),
                    spec);
}

Var dense(Tape& tape, HcnModel& m, Var x, const std::string& name) {
  return ag::dense(tape, x, param(tape, m, name + ".weight"), param(tape, m, name + ".bias"));
}

// Backbone features [1, C5 * W', T', 1].
Var backbone_features(DetectionModel& model, Tape& tape, const SkeletonSequence& seq) {
  HcnModel& m = model.backbone;
  const ModelConfig& c = m.config;
  if (seq.joints() != c.joints || seq.coords() != c.coords) {
    throw ShapeError("sequence '" + seq.id + "' has " + std::to_string(seq.joints()) +
                     " joints and " + std::to_string(seq.coords()) +
                     " coords, the detection model expects " + std::to_string(c.joints) + " and " +
                     std::to_string(c.coords));
  }
  const std::size_t persons = seq.persons.size();
  std::vector<Tensor> motion;
  for (const Tensor& p : seq.persons) motion.push_back(compute_motion(p));
  Var raw = tape.constant(stack_persons(seq.persons));
  Var mot = tape.constant(stack_persons(motion));
  StreamOutput sr = stream_forward(m, tape, raw, "raw");
  StreamOutput sm = stream_forward(m, tape, mot, "motion");
  const LayerSpecs l = layer_specs(c, m.geometry);
  Var x = ag::relu(tape, conv(tape, m, ag::concat_channels(tape, sr.out, sm.out), "conv5", l.conv5));
  if (c.pools.conv5) {
    const Tensor& v = tape.value(x);
    x = ag::maxpool2d(tape, x, pool_window_for(v.dim(2), v.dim(3)));
  }
  x = ag::group_max(tape, x, persons);
  const Tensor& v = tape.value(x);
  const std::size_t channels = v.dim(1), positions = v.dim(2), width = v.dim(3);
  x = ag::permute(tape, x, {0, 1, 3, 2});
  return ag::reshape(tape, x, {1, channels * width, positions, 1});
}

struct RpnOutput {
  Var cls;  // [positions * scales, 2]
  Var reg;  // [positions * scales, 2]
};

RpnOutput rpn_forward(DetectionModel& model, Tape& tape, Var features) {
  HcnModel& m = model.backbone;
  const std::size_t anchors = tape.value(features).dim(2) * model.config.scales.size();
  Var h = ag::relu(tape, conv(tape, m, features, "rpn.conv", rpn_spec(model.config)));
  auto rows = [&](Var v) {
    return ag::reshape(tape, ag::permute(tape, v, {0, 2, 3, 1}), {anchors, 2});
  };
  return {rows(conv(tape, m, h, "rpn.cls", rpn_out_spec(model.config))),
          rows(conv(tape, m, h, "rpn.reg", rpn_out_spec(model.config)))};
}

std::optional<TemporalWindow> clip_window(const TemporalWindow& w, double frames) {
  const double s = std::max(0.0, w.start()), e = std::min(frames, w.end());
  if (!(e - s >= 1.0)) return std::nullopt;
  TemporalWindow out = TemporalWindow::from_bounds(s, e);
  out.score = w.score;
  out.class_id = w.class_id;
  return out;
}

std::vector<TemporalWindow> make_proposals(const DetectionConfig& c, const AnchorSet& anchors,
                                           const Tensor& cls, const Tensor& reg, double frames) {
  std::vector<TemporalWindow> candidates;
  for (std::size_t a = 0; a < anchors.windows.size(); ++a) {
    const double l0 = cls[2 * a], l1 = cls[2 * a + 1];
    TemporalWindow w = decode_window({reg[2 * a], reg[2 * a + 1]}, anchors.windows[a]);
    w.score = 1.0 / (1.0 + std::exp(l0 - l1));
    if (!std::isfinite(w.center) || !std::isfinite(w.length)) continue;
    if (auto clipped = clip_window(w, frames)) candidates.push_back(*clipped);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const TemporalWindow& a, const TemporalWindow& b) { return a.score > b.score; });
  if (candidates.size() > c.pre_nms_top) candidates.resize(c.pre_nms_top);
  std::vector<TemporalWindow> kept = nms_temporal(std::move(candidates), c.proposal_nms);
  if (kept.size() > c.post_nms_top) kept.resize(c.post_nms_top);
  return kept;
}

struct HeadOutput {
  Var cls;  // [R, classes + 1]
  Var reg;  // [R, 2]
};

HeadOutput head_forward(DetectionModel& model, Tape& tape, Var features,
                        const std::vector<TemporalWindow>& proposals) {
  const double stride = model.config.stride();
  std::vector<std::pair<double, double>> spans;
  for (const TemporalWindow& p : proposals) spans.emplace_back(p.start() / stride, p.end() / stride);
  Var crops = ag::crop_and_resize_temporal(tape, features, spans, model.config.crop_len);
  const Tensor& v = tape.value(crops);
  Var flat = ag::reshape(tape, crops, {proposals.size(), v.numel() / proposals.size()});
  Var h = ag::relu(tape, dense(tape, model.backbone, flat, "head.fc"));
  return {dense(tape, model.backbone, h, "head.cls"), dense(tape, model.backbone, h, "head.reg")};
}

std::vector<TemporalWindow> groundtruth_windows(const SkeletonSequence& seq) {
  std::vector<TemporalWindow> out;
  for (const Segment& s : seq.segments) {
    TemporalWindow w = TemporalWindow::from_bounds(static_cast<double>(s.start),
                                                   static_cast<double>(s.end));
    w.class_id = s.label;
    out.push_back(w);
  }
  return out;
}

Tensor targets_tensor(const std::vector<RegressionTarget>& t) {
  Tensor out({t.size(), 2});
  for (std::size_t i = 0; i < t.size(); ++i) {
    out[2 * i] = t[i].tx;
    out[2 * i + 1] = t[i].tw;
  }
  return out;
}

bool long_enough(const DetectionModel& model, const SkeletonSequence& seq) {
  const auto& scales = model.config.scales;
  const double min_scale = *std::min_element(scales.begin(), scales.end());
  return static_cast<double>(seq.frames()) >= min_scale &&
         feature_positions(model.config.backbone, seq.frames()) > 0;
}

}  // namespace

DetectionModel build_detection_model(const DetectionConfig& config, Rng& rng) {
  config.validate();
  DetectionModel m;
  m.config = config;
  m.backbone = build_backbone(config.backbone, rng);
  ParameterStore& p = m.backbone.params;
  add_conv_params(p, "rpn.conv", rpn_spec(config), rng);
  add_conv_params(p, "rpn.cls", rpn_out_spec(config), rng);
  add_conv_params(p, "rpn.reg", rpn_out_spec(config), rng);
  add_dense_params(p, "head.fc", feature_channels(config) * config.crop_len, config.head_hidden,
                   rng);
  add_dense_params(p, "head.cls", config.head_hidden, config.classes + 1, rng);
  add_dense_params(p, "head.reg", config.head_hidden, 2, rng);
  return m;
}

DetectionLossParts detection_train_step(DetectionModel& model, const SkeletonSequence& seq,
                                        TrainState& state, Rng& rng) {
  const DetectionConfig& c = model.config;
  seq.validate();
  if (seq.segments.empty()) {
    throw DataError("detection training sequence '" + seq.id + "' has no segments");
  }
  if (!long_enough(model, seq)) {
    throw DataError("detection training sequence '" + seq.id + "' is shorter than the smallest anchor");
  }
  for (const Segment& s : seq.segments) {
    if (s.label >= c.classes) {
      throw DataError("sequence '" + seq.id + "': segment class " + std::to_string(s.label) +
                      " outside [0, " + std::to_string(c.classes) + ")");
    }
  }
  const double frames = static_cast<double>(seq.frames());
  const std::vector<TemporalWindow> gts = groundtruth_windows(seq);

  Tape tape;
  Var features = backbone_features(model, tape, seq);
  const AnchorSet anchors = generate_anchors(seq.frames(), c.stride(), c.scales);
  if (anchors.positions != tape.value(features).dim(2)) {
    throw ShapeError("anchor positions do not match the conv5 feature map");
  }
  RpnOutput rpn = rpn_forward(model, tape, features);

  // Anchor sampling.
  const AnchorAssignment assignment = assign_anchor_labels(anchors.windows, gts, c.pos_iou, c.neg_iou);
  std::vector<std::size_t> pos, neg;
  for (std::size_t a = 0; a < assignment.labels.size(); ++a) {
    if (assignment.labels[a] == AnchorLabel::kPositive) pos.push_back(a);
    if (assignment.labels[a] == AnchorLabel::kNegative) neg.push_back(a);
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const auto max_pos = static_cast<std::size_t>(
      std::floor(c.positive_fraction * static_cast<double>(c.anchor_batch)));
  pos.resize(std::min(pos.size(), std::max<std::size_t>(max_pos, 1)));
  neg.resize(std::min(neg.size(), c.anchor_batch - std::min(c.anchor_batch, pos.size())));
  std::vector<std::size_t> rows = pos;
  rows.insert(rows.end(), neg.begin(), neg.end());
  std::vector<std::size_t> labels(pos.size(), 1);
  labels.resize(rows.size(), 0);
  std::vector<RegressionTarget> rpn_targets;
  for (std::size_t a : pos) rpn_targets.push_back(assignment.targets[a]);
  Var rpn_loss = ag::detection_loss(tape, ag::gather_rows(tape, rpn.cls, rows), labels,
                                    ag::gather_rows(tape, rpn.reg, pos),
                                    targets_tensor(rpn_targets), c.reg_weight);

  // Second stage on the current proposals plus the groundtruth windows.
  std::vector<TemporalWindow> proposals =
      make_proposals(c, anchors, tape.value(rpn.cls), tape.value(rpn.reg), frames);
  proposals.insert(proposals.end(), gts.begin(), gts.end());
  std::vector<std::size_t> head_labels;
  std::vector<std::size_t> fg;
  std::vector<RegressionTarget> head_targets;
  for (std::size_t r = 0; r < proposals.size(); ++r) {
    double best = 0.0;
    std::size_t match = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = temporal_iou(proposals[r], gts[g]);
      if (iou > best) {
        best = iou;
        match = g;
      }
    }
    if (best >= c.head_fg_iou) {
      head_labels.push_back(*gts[match].class_id + 1);
      fg.push_back(r);
      head_targets.push_back(encode_window(gts[match], proposals[r]));
    } else {
      head_labels.push_back(0);
    }
  }
  HeadOutput head = head_forward(model, tape, features, proposals);
  Var head_loss = ag::detection_loss(tape, head.cls, head_labels, ag::gather_rows(tape, head.reg, fg),
                                     targets_tensor(head_targets), c.reg_weight);
  Var total = ag::weighted_sum(tape, {rpn_loss, head_loss}, {1.0, 1.0});
  DetectionLossParts parts{tape.value(total)[0], tape.value(rpn_loss)[0], tape.value(head_loss)[0]};
  if (!std::isfinite(parts.total)) {
    throw NumericError("detection training diverged at step " + std::to_string(state.step));
  }
  model.backbone.params.zero_grad();
  tape.backward(total);
  adam_step(state, model.backbone.params);
  return parts;
}

std::vector<TemporalWindow> detect(DetectionModel& model, const SkeletonSequence& seq) {
  const DetectionConfig& c = model.config;
  seq.validate();
  if (!long_enough(model, seq)) return {};
  const double frames = static_cast<double>(seq.frames());
  Tape tape;
  Var features = backbone_features(model, tape, seq);
  const AnchorSet anchors = generate_anchors(seq.frames(), c.stride(), c.scales);
  RpnOutput rpn = rpn_forward(model, tape, features);
  const std::vector<TemporalWindow> proposals =
      make_proposals(c, anchors, tape.value(rpn.cls), tape.value(rpn.reg), frames);
  if (proposals.empty()) return {};
  HeadOutput head = head_forward(model, tape, features, proposals);
  const Tensor probs = ops::softmax(tape.value(head.cls));
  const Tensor& reg = tape.value(head.reg);
  const std::size_t k1 = c.classes + 1;
  std::vector<std::vector<TemporalWindow>> per_class(c.classes);
  for (std::size_t r = 0; r < proposals.size(); ++r) {
    TemporalWindow refined = decode_window({reg[2 * r], reg[2 * r + 1]}, proposals[r]);
    if (!std::isfinite(refined.center) || !std::isfinite(refined.length)) continue;
    for (std::size_t k = 1; k < k1; ++k) {
      const double p = probs[r * k1 + k];
      if (p < c.min_score) continue;
      TemporalWindow w = refined;
      w.score = p;
      w.class_id = k - 1;
      if (auto clipped = clip_window(w, frames)) per_class[k - 1].push_back(*clipped);
    }
  }
  std::vector<TemporalWindow> out;
  for (auto& windows : per_class) {
    std::vector<TemporalWindow> kept = nms_temporal(std::move(windows), c.final_nms);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TemporalWindow& a, const TemporalWindow& b) { return a.score > b.score; });
  return out;
}

MapResult evaluate_map(const std::map<std::string, std::vector<TemporalWindow>>& detections,
                       const Dataset& groundtruth, double iou_threshold) {
  struct Gt {
    TemporalWindow window;
    bool matched = false;
  };
  // class -> sequence id -> groundtruth windows
  std::map<std::size_t, std::map<std::string, std::vector<Gt>>> gt;
  std::map<std::size_t, std::size_t> gt_count;
  for (const SkeletonSequence& s : groundtruth) {
    for (const Segment& seg : s.segments) {
      gt[seg.label][s.id].push_back(
          Gt{TemporalWindow::from_bounds(static_cast<double>(seg.start), static_cast<double>(seg.end))});
      ++gt_count[seg.label];
    }
  }
  if (gt_count.empty()) throw DataError("evaluate_map: groundtruth holds no segments");

  struct Det {
    std::string seq;
    TemporalWindow window;
  };
  std::map<std::size_t, std::vector<Det>> dets;
  for (const auto& [id, windows] : detections) {
    for (const TemporalWindow& w : windows) {
      if (!w.class_id) throw UsageError("evaluate_map: detection in '" + id + "' has no class");
      dets[*w.class_id].push_back(Det{id, w});
    }
  }

  MapResult result;
  double sum = 0.0;
  for (auto& [cls, count] : gt_count) {
    std::vector<Det>& list = dets[cls];
    std::stable_sort(list.begin(), list.end(), [](const Det& a, const Det& b) {
      if (a.window.score != b.window.score) return a.window.score > b.window.score;
      if (a.seq != b.seq) return a.seq < b.seq;
      return a.window.start() < b.window.start();
    });
    auto& class_gt = gt[cls];
    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (const Det& d : list) {
      double best = 0.0;
      Gt* match = nullptr;
      auto it = class_gt.find(d.seq);
      if (it != class_gt.end()) {
        for (Gt& g : it->second) {
          const double iou = temporal_iou(d.window, g.window);
          if (iou > best) {
            best = iou;
            match = &g;
          }
        }
      }
      if (match != nullptr && best >= iou_threshold && !match->matched) {
        match->matched = true;
        ++tp;
      } else {
        ++fp;
      }
      precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(count));
    }
    // Area under the precision envelope at every recall change.
    double ap = 0.0;
    double envelope = 0.0;
    for (std::size_t i = precision.size(); i-- > 0;) {
      envelope = std::max(envelope, precision[i]);
      const double prev = i == 0 ? 0.0 : recall[i - 1];
      ap += (recall[i] - prev) * envelope;
    }
    result.average_precision[cls] = ap;
    sum += ap;
  }
  result.map = sum / static_cast<double>(gt_count.size());
  return result;
}

MetricsHistory train_detection(DetectionModel& model, const Dataset& train, const Dataset& val,
                               TrainState& state, const DetectionSchedule& schedule,
                               const TrainHooks& hooks) {
  if (train.empty()) throw DataError("detection training set is empty");
  if (schedule.eval_every == 0) throw UsageError("eval_every must be >= 1");
  Rng rng(state.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  MetricsHistory history;
  double best = -1.0, loss_sum = 0.0;
  std::size_t seen = 0;
  const std::uint64_t first = state.step;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::uint64_t done = 0; done < schedule.total_steps; ++done) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const double lr = learning_rate(state.adam, state.step);
    loss_sum += detection_train_step(model, train[order[cursor++]], state, rng).total;
    ++seen;
    if ((state.step - first) % schedule.eval_every == 0 || done + 1 == schedule.total_steps) {
      history.push_back(MetricRecord{state.step, "train", loss_sum / static_cast<double>(seen), nan,
                                     nan, lr});
      loss_sum = 0.0;
      seen = 0;
      std::map<std::string, std::vector<TemporalWindow>> dets;
      for (const SkeletonSequence& s : val) dets[s.id] = detect(model, s);
      const MapResult m = evaluate_map(dets, val);
      MetricRecord vr{state.step, "val", nan, nan, m.map, lr};
      history.push_back(vr);
      if (hooks.on_eval) hooks.on_eval(vr);
      if (m.map > best) {
        best = m.map;
        if (hooks.on_best) hooks.on_best(vr, model.backbone, state);
      }
    }
  }
  return history;
}

std::string detections_jsonl(
    const std::map<std::string, std::vector<TemporalWindow>>& detections) {
  std::string out;
  for (const auto& [id, windows] : detections) {
    for (const TemporalWindow& w : windows) {
      nlohmann::json j;
      j["sequence_id"] = id;
      j["start"] = w.start();
      j["end"] = w.end();
      j["class"] = w.class_id ? nlohmann::json(*w.class_id) : nlohmann::json(nullptr);
      j["score"] = w.score;
      out += j.dump() + '\n';
    }
  }
  return out;
}

}  // namespace hcn

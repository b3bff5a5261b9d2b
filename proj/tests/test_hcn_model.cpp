// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hcn/error.hpp"
#include "hcn/losses.hpp"
#include "hcn/model.hpp"
#include "hcn/train.hpp"
#include "test_support.hpp"

using namespace hcn;
using hcn::testing::closed_form_count;
using hcn::testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.joints = 5;
  c.coords = 3;
  c.frames = 8;
  c.classes = 3;
  c.channels = ChannelConfig{8, 4, 4, 6, 6, 8, 8};
  c.pools = PoolConfig{false, true, true, false};
  c.max_persons = 2;
  c.dropout = 0.0;
  return c;
}

Batch random_batch(const ModelConfig& c, std::size_t batch, std::size_t persons, Rng& rng) {
  const Shape s{batch, persons, c.frames, c.joints, c.coords};
  return Batch{random_tensor(s, rng), random_tensor(s, rng)};
}

// Copy of `b` with persons of every sample reordered by `order`.
Batch permute_persons(const Batch& b, const std::vector<std::size_t>& order) {
  Batch out = b;
  const std::size_t B = b.raw.dim(0), P = b.raw.dim(1), block = b.raw.numel() / (B * P);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t p = 0; p < P; ++p) {
      std::copy_n(b.raw.raw() + (i * P + order[p]) * block, block, out.raw.raw() + (i * P + p) * block);
      std::copy_n(b.motion.raw() + (i * P + order[p]) * block, block, out.motion.raw() + (i * P + p) * block);
    }
  return out;
}

}  // namespace

TEST_CASE("default NTU preset parameter count") {
  Rng rng(0);
  const ModelConfig c = ModelConfig::ntu();
  HcnModel m = build_model(c, rng);
  const std::size_t count = m.params.scalar_count();
  CHECK(count == closed_form_count(c));
  CHECK(count == expected_parameter_count(c));
  CHECK(count == 784892);
  CHECK(count >= 600000);
  CHECK(count <= 1000000);
}

TEST_CASE("parameter count matches the closed form across configs") {
  Rng rng(1);
  for (FusionMode f : {FusionMode::kEarly, FusionMode::kLateMean, FusionMode::kLateConcat, FusionMode::kLateMax})
    for (Variant v : {Variant::kGlobal, Variant::kLocal})
      for (bool conv4 : {true, false}) {
        ModelConfig c = small_config();
        c.fusion = f;
        c.variant = v;
        c.include_conv4 = conv4;
        HcnModel m = build_model(c, rng);
        CHECK(m.params.scalar_count() == closed_form_count(c));
        CHECK(m.params.scalar_count() == expected_parameter_count(c));
      }
  ModelConfig sbu = ModelConfig::sbu();
  CHECK(build_model(sbu, rng).params.scalar_count() == closed_form_count(sbu));
}

TEST_CASE("global and local variants have equal counts when D == N") {
  Rng rng(2);
  ModelConfig c = small_config();
  c.joints = 3;
  c.coords = 3;
  c.variant = Variant::kGlobal;
  const std::size_t g = build_model(c, rng).params.scalar_count();
  c.variant = Variant::kLocal;
  CHECK(build_model(c, rng).params.scalar_count() == g);
  c.joints = 5;
  CHECK(build_model(c, rng).params.scalar_count() != g);
}

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  c.channels.conv3 = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = small_config();
  c.temporal_kernel = 2;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = small_config();
  c.frames = 2;
  c.pools = PoolConfig{true, true, true, true};
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = small_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  CHECK_THROWS_AS(parse_fusion_mode("late_min"), UsageError);
  CHECK(parse_variant("local") == Variant::kLocal);
  CHECK(to_string(FusionMode::kLateConcat) == "late_concat");
}

TEST_CASE("same seed gives identical parameters") {
  Rng a(42), b(42), c(43);
  HcnModel ma = build_model(small_config(), a), mb = build_model(small_config(), b);
  HcnModel mc = build_model(small_config(), c);
  for (std::size_t i = 0; i < ma.params.size(); ++i) CHECK(ma.params[i].value == mb.params[i].value);
  CHECK(ma.params.get("raw.conv1.weight").value != mc.params.get("raw.conv1.weight").value);
  for (std::size_t i = 0; i < ma.params.size(); ++i) {
    if (ma.params[i].name.ends_with(".bias")) CHECK(ma.params[i].value == Tensor(ma.params[i].value.shape()));
  }
  // Streams are separate parameter sets.
  CHECK(ma.params.get("raw.conv1.weight").value != ma.params.get("motion.conv1.weight").value);
}

TEST_CASE("forward shapes and eval determinism") {
  Rng rng(3);
  for (FusionMode f : {FusionMode::kEarly, FusionMode::kLateMean, FusionMode::kLateConcat, FusionMode::kLateMax}) {
    ModelConfig c = small_config();
    c.fusion = f;
    c.dropout = 0.5;
    HcnModel m = build_model(c, rng);
    Batch b = random_batch(c, 3, 2, rng);
    const Tensor l1 = predict_logits(m, b), l2 = predict_logits(m, b);
    CHECK(l1.shape() == Shape{3, 3});
    CHECK(l1 == l2);
    Tape tape;
    Rng drop(5);
    ForwardResult r = forward(m, tape, b, ops::Mode::kTrain, drop);
    CHECK(tape.value(r.logits) != l1);
  }
  ModelConfig c = small_config();
  c.fusion = FusionMode::kLateConcat;
  HcnModel m = build_model(c, rng);
  CHECK_THROWS_AS(predict_logits(m, random_batch(c, 1, 1, rng)), ShapeError);
  c.fusion = FusionMode::kLateMax;
  HcnModel mx = build_model(c, rng);
  CHECK(predict_logits(mx, random_batch(c, 2, 1, rng)).shape() == Shape{2, 3});
  CHECK_THROWS_AS(predict_logits(mx, random_batch(c, 1, 3, rng)), ShapeError);
}

TEST_CASE("stage one treats every joint on its own") {
  Rng rng(4);
  ModelConfig c = small_config();
  HcnModel m = build_model(c, rng);
  const Batch base = random_batch(c, 1, 1, rng);
  Tape t0;
  Rng unused(0);
  ForwardResult r0 = forward(m, t0, base, ops::Mode::kEval, unused);
  const Tensor ref = t0.value(r0.features.raw_conv2);  // [1, C2, T, N]
  REQUIRE(ref.shape() == Shape{1, 4, 8, 5});
  std::size_t probes = 0;
  for (std::size_t j = 0; j < c.joints; ++j)
    for (std::size_t t : {0u, 3u, 7u}) {
      Batch b = base;
      for (std::size_t d = 0; d < 3; ++d) b.raw.at({0, 0, t, j, d}) += 0.5;
      Tape tape;
      ForwardResult r = forward(m, tape, b, ops::Mode::kEval, unused);
      const Tensor& y = tape.value(r.features.raw_conv2);
      bool changed_at_j = false;
      for (std::size_t ch = 0; ch < 4; ++ch)
        for (std::size_t tt = 0; tt < 8; ++tt)
          for (std::size_t n = 0; n < 5; ++n) {
            const bool diff = y.at({0, ch, tt, n}) != ref.at({0, ch, tt, n});
            if (n != j) CHECK_FALSE(diff);
            changed_at_j = changed_at_j || diff;
          }
      CHECK(changed_at_j);
      ++probes;
    }
  CHECK(probes == 15);
}

TEST_CASE("one conv3 output depends on every joint") {
  Rng rng(5);
  ModelConfig c = small_config();
  c.joints = 7;
  HcnModel m = build_model(c, rng);
  const Batch base = random_batch(c, 1, 1, rng);
  Rng unused(0);
  Tape t0;
  const double ref = t0.value(forward(m, t0, base, ops::Mode::kEval, unused).features.raw_conv3).at({0, 0, 4, 0});
  for (std::size_t j = 0; j < c.joints; ++j) {
    Batch b = base;
    for (std::size_t d = 0; d < 3; ++d) b.raw.at({0, 0, 4, j, d}) += 1e-3;
    Tape tape;
    const double v = tape.value(forward(m, tape, b, ops::Mode::kEval, unused).features.raw_conv3).at({0, 0, 4, 0});
    CHECK_MESSAGE(std::fabs(v - ref) > 1e-9, "joint " << j);
  }
}

TEST_CASE("whole-model gradient check") {
  Rng rng(6);
  ModelConfig c;
  c.joints = 4;
  c.coords = 3;
  c.frames = 8;
  c.classes = 3;
  c.channels = ChannelConfig{8, 4, 4, 8, 8, 8, 8};
  c.pools = PoolConfig{true, true, false, false};
  c.max_persons = 2;
  c.dropout = 0.3;
  for (FusionMode f : {FusionMode::kLateMax, FusionMode::kEarly}) {
    for (Variant v : {Variant::kGlobal, Variant::kLocal}) {
      c.fusion = f;
      c.variant = v;
      HcnModel m = build_model(c, rng);
      const Batch b = random_batch(c, 2, 2, rng);
      const std::vector<std::size_t> labels{0, 2};
      auto r = hcn::testing::check_gradients(
          m.params,
          [&](Tape& tape, const std::vector<Var>&) {
            Rng drop(77);  // same mask on every evaluation
            ForwardResult fr = forward(m, tape, b, ops::Mode::kTrain, drop);
            return ag::softmax_cross_entropy(tape, fr.logits, labels);
          },
          rng, 1e-5, true);
      CHECK_MESSAGE(r.max_rel_error < 1e-3, to_string(f) << "/" << to_string(v) << " " << r.worst);
    }
  }
}

TEST_CASE("fuse_persons") {
  Rng rng(7);
  Tensor a = random_tensor({3, 2, 2}, rng), b = random_tensor({3, 2, 2}, rng);
  CHECK(fuse_persons({a}, FusionMode::kLateMax) == a);
  CHECK(fuse_persons({a, a}, FusionMode::kLateMean) == a);
  CHECK(fuse_persons({a, b}, FusionMode::kLateMax) == fuse_persons({b, a}, FusionMode::kLateMax));
  CHECK(fuse_persons({a, b}, FusionMode::kLateConcat).shape() == Shape{6, 2, 2});
  CHECK_THROWS_AS(fuse_persons({a}, FusionMode::kEarly), UsageError);
  CHECK_THROWS_AS(fuse_persons({}, FusionMode::kLateMax), UsageError);
}

TEST_CASE("late max and mean logits are bit-exact under 50 person permutations") {
  Rng rng(8);
  for (FusionMode f : {FusionMode::kLateMax, FusionMode::kLateMean}) {
    ModelConfig c = small_config();
    c.fusion = f;
    c.max_persons = 4;
    HcnModel m = build_model(c, rng);
    const Batch b = random_batch(c, 3, 4, rng);
    const Tensor ref = predict_logits(m, b);
    std::vector<std::size_t> order{0, 1, 2, 3};
    for (int k = 0; k < 50; ++k) {
      std::shuffle(order.begin(), order.end(), rng);
      CHECK(predict_logits(m, permute_persons(b, order)) == ref);
    }
  }
}

TEST_CASE("predict returns softmax probabilities") {
  Tensor p = ops::softmax(Tensor({1, 3}, {1, 2, 3}));
  CHECK(p[0] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(p[2] == doctest::Approx(0.6652).epsilon(1e-3));
  CHECK(std::fabs(p[0] - 0.0900) < 1e-4);
  CHECK(std::fabs(p[1] - 0.2447) < 1e-4);
  CHECK(std::fabs(p[2] - 0.6652) < 1e-4);
  Tensor shifted = ops::softmax(Tensor({1, 3}, {101, 102, 103}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::fabs(shifted[i] - p[i]) < 1e-15);

  Rng rng(9);
  ModelConfig c = small_config();
  HcnModel m = build_model(c, rng);
  SkeletonSequence s;
  s.id = "x";
  s.label = 1;
  s.persons = {random_tensor({20, 5, 3}, rng), random_tensor({20, 5, 3}, rng)};
  const std::vector<double> probs = predict(m, s);
  REQUIRE(probs.size() == 3);
  CHECK(std::fabs(std::accumulate(probs.begin(), probs.end(), 0.0) - 1.0) < 1e-6);
  for (double v : probs) CHECK(v > 0.0);
  m.params.get("fc8.weight").value.fill(0.0);
  for (double v : predict(m, s)) CHECK(std::fabs(v - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("SBU preset builds and trains one step") {
  Rng rng(10);
  const ModelConfig c = ModelConfig::sbu();
  CHECK_FALSE(c.include_conv4);
  CHECK(c.frames == 16);
  CHECK(c.channels.conv1 == 32);
  CHECK(c.channels.conv2 == 16);
  CHECK(c.channels.conv3 == 16);
  CHECK(c.channels.conv5 == 32);
  CHECK(c.channels.conv6 == 64);
  CHECK(c.channels.fc7 == 64);
  HcnModel m = build_model(c, rng);
  CHECK_FALSE(m.params.contains("raw.conv4.weight"));
  Dataset data;
  for (std::size_t i = 0; i < 4; ++i) {
    SkeletonSequence s;
    s.id = "sbu-" + std::to_string(i);
    s.label = i % 8;
    s.persons = {random_tensor({24, 15, 3}, rng), random_tensor({24, 15, 3}, rng)};
    data.push_back(s);
  }
  const Tensor before = m.params.get("conv5.weight").value;
  TrainState st = make_train_state(m, 0);
  MetricsHistory h = train_loop(m, data, data, st, Schedule{4, 1, 1});
  CHECK(st.step == 1);
  CHECK(h.size() == 2);
  CHECK(m.params.get("conv5.weight").value != before);
  for (std::size_t i = 0; i < m.params.size(); ++i) CHECK(m.params[i].value.all_finite());
}

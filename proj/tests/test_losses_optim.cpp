// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <set>

#include "hcn/error.hpp"
#include "hcn/losses.hpp"
#include "hcn/model.hpp"
#include "hcn/optim.hpp"
#include "hcn/synth.hpp"
#include "hcn/train.hpp"
#include "test_support.hpp"

using namespace hcn;
using hcn::testing::check_gradients;
using hcn::testing::random_tensor;

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

ModelConfig tiny(std::size_t joints, std::size_t classes) {
  ModelConfig c;
  c.joints = joints;
  c.frames = 16;
  c.classes = classes;
  c.channels = ChannelConfig{8, 8, 8, 8, 16, 16, 32};
  c.max_persons = 1;
  c.dropout = 0.0;
  return c;
}

Dataset tiny_data(std::size_t per_class, std::uint64_t seed) {
  SynthSpec s;
  s.classes = 3;
  s.samples_per_class = per_class;
  s.frames = 20;
  s.joints = 6;
  s.seed = seed;
  return synth_generate(s);
}

}  // namespace

TEST_CASE("softmax cross entropy values") {
  auto u = losses::softmax_cross_entropy(Tensor({2, 5}), {0, 3});
  CHECK(std::fabs(u.loss - std::log(5.0)) < 1e-15);
  auto r = losses::softmax_cross_entropy(Tensor({1, 2}, {0, 10}), {1});
  CHECK(std::fabs(r.loss - 4.54e-5) < 5e-8);
  CHECK(std::fabs(r.loss - std::log1p(std::exp(-10.0))) < 1e-15);
  // (softmax - onehot) / B
  auto g = losses::softmax_cross_entropy(Tensor({2, 3}, {1, 2, 3, 0, 0, 0}), {2, 0});
  const Tensor p = ops::softmax(Tensor({2, 3}, {1, 2, 3, 0, 0, 0}));
  CHECK(std::fabs(g.grad[2] - (p[2] - 1.0) / 2) < 1e-15);
  CHECK(std::fabs(g.grad[1] - p[1] / 2) < 1e-15);
  CHECK(std::fabs(g.grad[3] - (p[3] - 1.0) / 2) < 1e-15);
  CHECK_THROWS_AS(losses::softmax_cross_entropy(Tensor({1, 2}), {2}), UsageError);
  auto big = losses::softmax_cross_entropy(Tensor({1, 3}, {1000, -1000, 0}), {1});
  CHECK(std::isfinite(big.loss));
  CHECK(big.loss == doctest::Approx(2000.0));
}

TEST_CASE("smooth L1 values") {
  CHECK(losses::smooth_l1_value(0.0) == 0.0);
  CHECK(losses::smooth_l1_value(0.5) == 0.125);
  CHECK(losses::smooth_l1_value(2.0) == 1.5);
  CHECK(losses::smooth_l1_value(-2.0) == 1.5);
  CHECK(losses::smooth_l1_derivative(0.5) == 0.5);
  CHECK(losses::smooth_l1_derivative(-3.0) == -1.0);
  const std::vector<double> a{0.0, 0.5, 2.0}, b{0.0, 0.0, 0.0};
  auto s = losses::smooth_l1(a, b);
  CHECK(s.loss == 1.625);
}

TEST_CASE("detection loss") {
  losses::DetectionLossBatch perfect;
  perfect.probabilities = Tensor({2, 3}, {1, 0, 0, 0, 0, 1});
  perfect.labels = {0, 2};
  perfect.predicted_targets = Tensor({1, 2}, {0.3, -0.1});
  perfect.groundtruth_targets = Tensor({1, 2}, {0.3, -0.1});
  CHECK(losses::detection_loss(perfect).total < 1e-6);

  // Hand arithmetic: L_cls = (-ln 0.8 - ln 0.7) / 2 = (0.2231435513142098 +
  // 0.35667494393873245) / 2; one positive with d = (0.4, -1.7):
  // L_reg = 0.5 * 0.16 + (1.7 - 0.5) = 1.28.
  losses::DetectionLossBatch b;
  b.probabilities = Tensor({2, 2}, {0.8, 0.2, 0.3, 0.7});
  b.labels = {0, 1};
  b.predicted_targets = Tensor({1, 2}, {0.5, -0.2});
  b.groundtruth_targets = Tensor({1, 2}, {0.1, 1.5});
  auto l = losses::detection_loss(b);
  CHECK(std::fabs(l.classification - 0.28990924762647112) < 1e-15);
  CHECK(std::fabs(l.regression - 1.28) < 1e-15);
  CHECK(std::fabs(l.total - 1.5699092476264711) < 1e-14);

  b.reg_weight = 0.0;
  CHECK(losses::detection_loss(b).total == losses::detection_loss(b).classification);

  b.reg_weight = 1.0;
  b.predicted_targets = Tensor({0, 2});
  b.groundtruth_targets = Tensor({0, 2});
  CHECK(losses::detection_loss(b).regression == 0.0);
}

TEST_CASE("losses are non-negative") {
  Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    const std::size_t B = pick(rng, 1, 4), C = pick(rng, 2, 5);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < B; ++i) labels.push_back(pick(rng, 0, C - 1));
    CHECK(losses::softmax_cross_entropy(random_tensor({B, C}, rng, -20, 20), labels).loss >= 0.0);
    const Tensor a = random_tensor({B, 2}, rng, -5, 5), t = random_tensor({B, 2}, rng, -5, 5);
    CHECK(losses::smooth_l1(a.data(), t.data()).loss >= 0.0);
    losses::DetectionLossBatch d;
    d.probabilities = ops::softmax(random_tensor({B, C}, rng, -5, 5));
    d.labels = labels;
    d.predicted_targets = a;
    d.groundtruth_targets = t;
    CHECK(losses::detection_loss(d).total >= 0.0);
  }
}

TEST_CASE("gradient property: loss ops") {
  Rng rng(2);
  for (int k = 0; k < 24; ++k) {
    const std::size_t B = pick(rng, 1, 5), C = pick(rng, 2, 6), R = pick(rng, 0, 4);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < B; ++i) labels.push_back(pick(rng, 0, C - 1));
    ParameterStore p;
    p.add("logits", {B, C}).value = random_tensor({B, C}, rng, -3, 3);
    auto ce = check_gradients(p, [labels](Tape& t, const std::vector<Var>& v) {
      return ag::softmax_cross_entropy(t, v[0], labels);
    }, rng, 1e-5, true);
    CHECK_MESSAGE(ce.max_rel_error < 1e-4, ce.worst);

    // Residuals kept away from the |d| = 1 seam.
    ParameterStore q;
    Tensor target = random_tensor({B, 2}, rng, -2, 2);
    Tensor pred = random_tensor({B, 2}, rng, -2, 2);
    for (std::size_t i = 0; i < pred.numel(); ++i)
      if (std::fabs(std::fabs(pred[i] - target[i]) - 1.0) < 0.01) pred[i] += 0.05;
    q.add("pred", {B, 2}).value = pred;
    auto sl = check_gradients(q, [target](Tape& t, const std::vector<Var>& v) {
      return ag::smooth_l1(t, v[0], target);
    }, rng, 1e-5, true);
    CHECK_MESSAGE(sl.max_rel_error < 1e-4, sl.worst);

    ParameterStore d;
    d.add("cls", {B, C}).value = random_tensor({B, C}, rng, -3, 3);
    d.add("reg", {R, 2}).value = random_tensor({R, 2}, rng, -0.4, 0.4);
    const Tensor reg_target = random_tensor({R, 2}, rng, -0.4, 0.4);
    const double lambda = 0.5 * static_cast<double>(pick(rng, 0, 4));
    auto dl = check_gradients(d, [labels, reg_target, lambda](Tape& t, const std::vector<Var>& v) {
      return ag::detection_loss(t, v[0], labels, v[1], reg_target, lambda);
    }, rng, 1e-5, true);
    CHECK_MESSAGE(dl.max_rel_error < 1e-4, dl.worst);
  }
}

TEST_CASE("detection loss probability gradient matches differences") {
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    losses::DetectionLossBatch b;
    const std::size_t N = pick(rng, 1, 4), C = pick(rng, 2, 4), R = pick(rng, 1, 3);
    b.probabilities = random_tensor({N, C}, rng, 0.05, 1.0);
    for (std::size_t i = 0; i < N; ++i) b.labels.push_back(pick(rng, 0, C - 1));
    b.predicted_targets = random_tensor({R, 2}, rng, -2, 2);
    b.groundtruth_targets = random_tensor({R, 2}, rng, -2, 2);
    const auto l = losses::detection_loss(b);
    for (Tensor* t : {&b.probabilities, &b.predicted_targets}) {
      const Tensor& g = t == &b.probabilities ? l.grad_probabilities : l.grad_targets;
      for (std::size_t i = 0; i < t->numel(); ++i) {
        const double saved = (*t)[i];
        (*t)[i] = saved + 1e-6;
        const double plus = losses::detection_loss(b).total;
        (*t)[i] = saved - 1e-6;
        const double minus = losses::detection_loss(b).total;
        (*t)[i] = saved;
        CHECK(hcn::testing::rel_error(g[i], (plus - minus) / 2e-6) < 1e-4);
      }
    }
  }
}

TEST_CASE("learning rate schedule") {
  AdamConfig c;
  CHECK(learning_rate(c, 0) == 0.001);
  CHECK(std::fabs(learning_rate(c, 1000) - 0.00099) < 1e-18);
  CHECK(std::fabs(learning_rate(c, 2000) - 0.0009801) < 1e-18);
  CHECK(learning_rate(c, 500) < learning_rate(c, 499));
}

TEST_CASE("Adam matches a hand-stepped recurrence") {
  ParameterStore p;
  p.add("w", {1}).value = Tensor({1}, {1.0});
  TrainState st;
  st.adam.decay_rate = 0.5;
  st.adam.decay_steps = 1.0;  // lr halves every step, to pin the step index
  // Hand recurrence with g = 1: m_t = 1 - 0.9^t and v_t = 1 - 0.999^t, so
  // m_hat = v_hat = 1 and each update is lr_t / (1 + 1e-8), lr_t = 1e-3 * 0.5^(t-1).
  const double expected[3] = {1.0 - 1e-3 / (1.0 + 1e-8),
                              1.0 - 1e-3 / (1.0 + 1e-8) - 5e-4 / (1.0 + 1e-8),
                              1.0 - 1e-3 / (1.0 + 1e-8) - 5e-4 / (1.0 + 1e-8) - 2.5e-4 / (1.0 + 1e-8)};
  for (int t = 0; t < 3; ++t) {
    p[0].grad = Tensor({1}, {1.0});
    adam_step(st, p);
    CHECK(std::fabs(p[0].value[0] - expected[t]) < 1e-12);
  }
  CHECK(st.step == 3);
  CHECK(std::fabs(st.first_moment["w"][0] - (1.0 - 0.729)) < 1e-15);
  CHECK(std::fabs(st.second_moment["w"][0] - (1.0 - std::pow(0.999, 3))) < 1e-15);

  // A non-constant gradient sequence, stepped by hand.
  ParameterStore q;
  q.add("w", {1}).value = Tensor({1}, {0.5});
  TrainState s2;
  double m = 0, v = 0, w = 0.5;
  const double grads[4] = {0.3, -1.2, 2.0, 0.01};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double lr = 0.001 * std::pow(0.99, (t - 1) / 1000.0);
    w -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    q[0].grad = Tensor({1}, {g});
    adam_step(s2, q);
    CHECK(std::fabs(q[0].value[0] - w) < 1e-12);
  }
}

TEST_CASE("Adam fixed point and non-finite gradients") {
  ParameterStore p;
  p.add("a", {3}).value = Tensor({3}, {1, 2, 3});
  TrainState st;
  adam_step(st, p);
  CHECK(p[0].value == Tensor({3}, {1, 2, 3}));
  CHECK(st.step == 1);
  p[0].grad = Tensor({3}, {0, NAN, 0});
  try {
    adam_step(st, p);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("'a'") != std::string::npos);
  }
  CHECK(p[0].value == Tensor({3}, {1, 2, 3}));
  CHECK(st.step == 1);
}

TEST_CASE("Adam step-size bounds") {
  Rng rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution coin(0.5), spike(0.05);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterStore any, flat;
    any.add("w", {16});
    flat.add("w", {16});
    TrainState sa, sf;
    const double mag = std::exp(n(rng));
    for (int t = 0; t < 200; ++t) {
      for (std::size_t i = 0; i < 16; ++i) {
        any[0].grad[i] = n(rng) * (spike(rng) ? 1000.0 : 1.0);
        flat[0].grad[i] = coin(rng) ? mag : -mag;
      }
      const double lr = learning_rate(sa.adam, sa.step);
      const Tensor a0 = any[0].value, f0 = flat[0].value;
      adam_step(sa, any);
      adam_step(sf, flat);
      // Any gradients: lr (1 - b1) / sqrt(1 - b2). Constant-magnitude
      // gradients: lr.
      const double loose = lr * 0.1 / std::sqrt(0.001) * (1.0 + 1e-9);
      for (std::size_t i = 0; i < 16; ++i) {
        CHECK(std::fabs(any[0].value[i] - a0[i]) <= loose);
        CHECK(std::fabs(flat[0].value[i] - f0[i]) <= lr * (1.0 + 1e-12));
      }
    }
  }
}

TEST_CASE("weight decay reaches only fc7 weights") {
  Rng r1(5), r2(5);
  HcnModel m = build_model(tiny(6, 3), r1);
  HcnModel twin = build_model(tiny(6, 3), r2);
  TrainState with = make_train_state(m, 0);
  CHECK(with.weight_decay.size() == 1);
  CHECK(with.weight_decay.at("fc7.weight") == 0.001);
  TrainState without = with;
  without.weight_decay.clear();

  ParameterStore& a = m.params;
  ParameterStore& b = twin.params;
  for (int s = 0; s < 2; ++s) {
    a.zero_grad();
    b.zero_grad();
    adam_step(with, a);
    adam_step(without, b);
  }
  CHECK(without.step == 2);
  // Zero gradients and no decay: nothing but fc7.weight moves.
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool same = a[i].value == b[i].value;
    CHECK_MESSAGE(same == (a[i].name != "fc7.weight"), a[i].name);
  }
  Rng r3(5);
  HcnModel ref = build_model(tiny(6, 3), r3);
  for (std::size_t i = 0; i < ref.params.size(); ++i) CHECK(b[i].value == ref.params[i].value);
}

TEST_CASE("collate pads to the largest person count in the batch") {
  Rng rng(6);
  ModelConfig c = tiny(6, 3);
  c.max_persons = 3;
  HcnModel m = build_model(c, rng);
  Dataset d = tiny_data(1, 0);
  d[1].persons.push_back(d[1].persons[0]);
  Batch b = collate(m, {&d[0], &d[1]}, ops::Mode::kEval, rng);
  CHECK(b.raw.shape() == Shape{2, 2, 16, 6, 3});
  c.fusion = FusionMode::kLateConcat;
  HcnModel mc = build_model(c, rng);
  CHECK(collate(mc, {&d[0], &d[1]}, ops::Mode::kEval, rng).raw.shape() == Shape{2, 3, 16, 6, 3});
}

TEST_CASE("training loop schedule, determinism and metrics") {
  const Dataset train = tiny_data(4, 1), val = tiny_data(2, 2);
  auto run = [&](std::uint64_t seed, Schedule s) {
    Rng rng(seed);
    HcnModel m = build_model(tiny(6, 3), rng);
    TrainState st = make_train_state(m, seed);
    return train_loop(m, train, val, st, s);
  };
  const MetricsHistory a = run(3, Schedule{4, 10, 4}), b = run(3, Schedule{4, 10, 4});
  CHECK(metrics_csv(a) == metrics_csv(b));
  REQUIRE(a.size() == 6);  // steps 4, 8, 10
  CHECK(a[0].step == 4);
  CHECK(a[2].step == 8);
  CHECK(a[4].step == 10);
  CHECK(a[0].split == "train");
  CHECK(a[1].split == "val");
  CHECK(std::isnan(a[1].map));
  CHECK(metrics_csv(run(4, Schedule{4, 10, 4})) != metrics_csv(a));

  const MetricsHistory once = run(3, Schedule{4, 5, 100});
  REQUIRE(once.size() == 2);
  CHECK(once[1].step == 5);

  int improvements = 0;
  Rng rng(3);
  HcnModel m = build_model(tiny(6, 3), rng);
  TrainState st = make_train_state(m, 3);
  TrainHooks hooks;
  double last_best = -1;
  hooks.on_best = [&](const MetricRecord& r, const HcnModel&, const TrainState&) {
    CHECK(r.accuracy > last_best);
    last_best = r.accuracy;
    ++improvements;
  };
  train_loop(m, train, val, st, Schedule{4, 10, 4}, hooks);
  CHECK(improvements >= 1);
}

TEST_CASE("training aborts on a non-finite loss") {
  const Dataset train = tiny_data(2, 1);
  Rng rng(7);
  HcnModel m = build_model(tiny(6, 3), rng);
  m.params.get("fc8.bias").value[0] = std::numeric_limits<double>::infinity();
  TrainState st = make_train_state(m, 0);
  CHECK_THROWS_AS(train_loop(m, train, train, st, Schedule{2, 3, 1}), NumericError);
  CHECK_THROWS_AS(train_loop(m, {}, train, st, Schedule{2, 3, 1}), DataError);
}

TEST_CASE("small overfit run reaches full training accuracy") {
  const Dataset train = tiny_data(3, 8);
  Rng rng(8);
  HcnModel m = build_model(tiny(6, 3), rng);
  TrainState st = make_train_state(m, 8);
  st.adam.base_lr = 3e-3;
  const MetricsHistory h = train_loop(m, train, train, st, Schedule{9, 300, 50});
  CHECK(h.back().accuracy == 1.0);
}

TEST_CASE("metrics CSV round trip") {
  MetricsHistory h{{1, "train", 1.25, 0.5, std::numeric_limits<double>::quiet_NaN(), 1e-3},
                   {1, "val", 0.1 + 0.2, 1.0 / 3.0, std::numeric_limits<double>::quiet_NaN(), 1e-3},
                   {7, "val", std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(), 0.875, 9.9e-4}};
  const std::string csv = metrics_csv(h);
  CHECK(csv.rfind("step,split,loss,accuracy,mAP,learning_rate\n", 0) == 0);
  CHECK(csv.find("1,train,1.25,0.5,,0.001") != std::string::npos);
  const MetricsHistory back = parse_metrics_csv(csv);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].step == h[i].step);
    CHECK(back[i].split == h[i].split);
    for (auto f : {&MetricRecord::loss, &MetricRecord::accuracy, &MetricRecord::map, &MetricRecord::learning_rate}) {
      const double x = h[i].*f, y = back[i].*f;
      CHECK(((std::isnan(x) && std::isnan(y)) || x == y));
    }
  }
  CHECK(metrics_csv(back) == csv);
  CHECK_THROWS(parse_metrics_csv("step,wrong\n"));
}

TEST_CASE("split_dataset is a seeded partition") {
  const Dataset d = tiny_data(10, 0);
  auto [a, b] = split_dataset(d, 0.8, 5);
  CHECK(a.size() == 24);
  CHECK(b.size() == 6);
  auto [a2, b2] = split_dataset(d, 0.8, 5);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == a2[i].id);
  std::set<std::string> ids;
  for (const auto& s : a) ids.insert(s.id);
  for (const auto& s : b) ids.insert(s.id);
  CHECK(ids.size() == 30);
}

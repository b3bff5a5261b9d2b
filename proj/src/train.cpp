// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "hcn/error.hpp"
#include "hcn/losses.hpp"

namespace hcn {
namespace {

bool fixed_person_count(FusionMode mode) {
  return mode == FusionMode::kEarly || mode == FusionMode::kLateConcat;
}

std::vector<std::size_t> labels_of(const std::vector<const SkeletonSequence*>& samples) {
  std::vector<std::size_t> labels;
  labels.reserve(samples.size());
  for (const SkeletonSequence* s : samples) {
    if (!s->label) throw DataError("sample '" + s->id + "' has no class label");
    labels.push_back(*s->label);
  }
  return labels;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t classes = logits.dim(1);
  const double* r = logits.raw() + row * classes;
  return static_cast<std::size_t>(std::max_element(r, r + classes) - r);
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Batch collate(const HcnModel& model, const std::vector<const SkeletonSequence*>& samples,
              ops::Mode mode, Rng& rng) {
  const ModelConfig& c = model.config;
  PreprocessOptions opts;
  opts.frames = c.frames;
  opts.max_persons = c.max_persons;
  opts.pad = fixed_person_count(c.fusion);
  std::vector<SampleTensors> tensors;
  tensors.reserve(samples.size());
  std::size_t persons = 0;
  for (const SkeletonSequence* s : samples) {
    tensors.push_back(preprocess(*s, opts, mode, rng));
    persons = std::max(persons, tensors.back().raw.dim(0));
  }
  for (SampleTensors& t : tensors) {
    const std::size_t have = t.raw.dim(0);
    if (have == persons) continue;
    Shape shape = t.raw.shape();
    shape[0] = persons;
    Tensor raw(shape), motion(shape);
    std::copy_n(t.raw.raw(), t.raw.numel(), raw.raw());
    std::copy_n(t.motion.raw(), t.motion.numel(), motion.raw());
    t = SampleTensors{std::move(raw), std::move(motion)};
  }
  return make_batch(tensors);
}

EvalResult evaluate(HcnModel& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw DataError("evaluation dataset is empty");
  if (batch_size == 0) throw UsageError("batch_size must be >= 1");
  EvalResult out;
  Rng unused(0);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    std::vector<const SkeletonSequence*> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&data[i]);
    const std::vector<std::size_t> labels = labels_of(chunk);
    Tensor logits = predict_logits(model, collate(model, chunk, ops::Mode::kEval, unused));
    loss_sum += losses::softmax_cross_entropy(logits, labels).loss *
                static_cast<double>(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const std::size_t p = argmax_row(logits, i);
      out.predictions.push_back(p);
      if (p == labels[i]) ++correct;
    }
  }
  out.loss = loss_sum / static_cast<double>(data.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

TrainState make_train_state(const HcnModel& model, std::uint64_t seed, const AdamConfig& adam) {
  TrainState state;
  state.adam = adam;
  state.seed = seed;
  if (model.params.contains("fc7.weight")) state.weight_decay["fc7.weight"] = 0.001;
  return state;
}

MetricsHistory train_loop(HcnModel& model, const Dataset& train, const Dataset& val,
                          TrainState& state, const Schedule& schedule, const TrainHooks& hooks) {
  if (train.empty()) throw DataError("training dataset is empty");
  if (val.empty()) throw DataError("validation dataset is empty");
  if (schedule.batch_size == 0) throw UsageError("batch_size must be >= 1");
  if (schedule.eval_every == 0) throw UsageError("eval_every must be >= 1");

  Rng rng(state.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  MetricsHistory history;
  double best = -1.0;
  double loss_sum = 0.0, acc_sum = 0.0;
  std::size_t seen = 0;
  const std::uint64_t first = state.step;
  for (std::uint64_t done = 0; done < schedule.total_steps; ++done) {
    std::vector<const SkeletonSequence*> batch;
    while (batch.size() < std::min(schedule.batch_size, train.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&train[order[cursor++]]);
    }
    const std::vector<std::size_t> labels = labels_of(batch);
    const double lr = learning_rate(state.adam, state.step);

    Tape tape;
    Batch inputs = collate(model, batch, ops::Mode::kTrain, rng);
    ForwardResult fwd = forward(model, tape, inputs, ops::Mode::kTrain, rng);
    Var loss = ag::softmax_cross_entropy(tape, fwd.logits, labels);
    const double loss_value = tape.value(loss)[0];
    if (!std::isfinite(loss_value)) {
      throw NumericError("training diverged at step " + std::to_string(state.step) +
                         ": loss is not finite");
    }
    model.params.zero_grad();
    tape.backward(loss);
    adam_step(state, model.params);

    const Tensor& logits = tape.value(fwd.logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += argmax_row(logits, i) == labels[i];
    loss_sum += loss_value * static_cast<double>(labels.size());
    acc_sum += static_cast<double>(correct);
    seen += labels.size();

    const std::uint64_t local_step = state.step - first;
    if (local_step % schedule.eval_every == 0 || done + 1 == schedule.total_steps) {
      MetricRecord tr{state.step, "train", loss_sum / static_cast<double>(seen),
                      acc_sum / static_cast<double>(seen),
                      std::numeric_limits<double>::quiet_NaN(), lr};
      history.push_back(tr);
      loss_sum = acc_sum = 0.0;
      seen = 0;
      const EvalResult ev = evaluate(model, val, schedule.batch_size);
      MetricRecord vr{state.step, "val", ev.loss, ev.accuracy,
                      std::numeric_limits<double>::quiet_NaN(), lr};
      history.push_back(vr);
      if (hooks.on_eval) hooks.on_eval(vr);
      if (ev.accuracy > best) {
        best = ev.accuracy;
        if (hooks.on_best) hooks.on_best(vr, model, state);
      }
    }
  }
  return history;
}

std::string metrics_csv(const MetricsHistory& history) {
  std::string out = "step,split,loss,accuracy,mAP,learning_rate\n";
  for (const MetricRecord& r : history) {
    out += std::to_string(r.step) + ',' + r.split + ',' + format_number(r.loss) + ',' +
           format_number(r.accuracy) + ',' + format_number(r.map) + ',' +
           format_number(r.learning_rate) + '\n';
  }
  return out;
}

void write_metrics_csv(const MetricsHistory& history, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << metrics_csv(history);
  if (!out) throw Error("cannot write metrics file " + path.string());
}

MetricsHistory parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "step,split,loss,accuracy,mAP,learning_rate") {
    throw DataError("metrics CSV: unexpected header");
  }
  MetricsHistory out;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (fields.size() != 6) {
      throw DataError("metrics CSV line " + std::to_string(number) + ": expected 6 fields");
    }
    auto num = [&](const std::string& f) {
      if (f.empty()) return std::numeric_limits<double>::quiet_NaN();
      try {
        return std::stod(f);
      } catch (const std::exception&) {
        throw DataError("metrics CSV line " + std::to_string(number) + ": bad number '" + f + "'");
      }
    };
    MetricRecord r;
    try {
      r.step = std::stoull(fields[0]);
    } catch (const std::exception&) {
      throw DataError("metrics CSV line " + std::to_string(number) + ": bad step");
    }
    r.split = fields[1];
    r.loss = num(fields[2]);
    r.accuracy = num(fields[3]);
    r.map = num(fields[4]);
    r.learning_rate = num(fields[5]);
    out.push_back(r);
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double fraction,
                                          std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw UsageError("split fraction must be in [0, 1]");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto cut = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(data.size()) + 0.5));
  std::pair<Dataset, Dataset> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < cut ? out.first : out.second).push_back(data[order[i]]);
  }
  return out;
}

}  // namespace hcn

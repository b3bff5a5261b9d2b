// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// Recognition training loop, batched evaluation and the metrics CSV.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hcn/model.hpp"
#include "hcn/optim.hpp"
#include "hcn/skeleton.hpp"

namespace hcn {

struct Schedule {
  std::size_t batch_size = 64;
  std::uint64_t total_steps = 300000;
  std::uint64_t eval_every = 1000;
};

// One CSV row. `map` is NaN for recognition rows.
struct MetricRecord {
  std::uint64_t step = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double map = 0.0;
  double learning_rate = 0.0;
};

using MetricsHistory = std::vector<MetricRecord>;

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
};

// Eval-mode loss and accuracy over a labeled dataset, in chunks of batch_size.
EvalResult evaluate(HcnModel& model, const Dataset& data, std::size_t batch_size = 64);

// Preprocesses samples and stacks them into a batch. Samples with fewer
// persons are zero padded to the largest count in the batch; fixed-person
// fusion modes always pad to max_persons.
Batch collate(const HcnModel& model, const std::vector<const SkeletonSequence*>& samples,
              ops::Mode mode, Rng& rng);

struct TrainHooks {
  // Called whenever the validation accuracy improves on the best so far.
  std::function<void(const MetricRecord&, const HcnModel&, const TrainState&)> on_best;
  // Called after every evaluation.
  std::function<void(const MetricRecord&)> on_eval;
};

// Runs total_steps Adam steps (shuffled with the state seed) and evaluates
// on `val` every eval_every steps and at the last step. Each evaluation adds
// a "train" row (running mean since the previous evaluation) and a "val"
// row. Throws NumericError when the loss stops being finite.
MetricsHistory train_loop(HcnModel& model, const Dataset& train, const Dataset& val,
                          TrainState& state, const Schedule& schedule,
                          const TrainHooks& hooks = {});

// Default optimizer state for a model: weight decay 0.001 on fc7.weight.
TrainState make_train_state(const HcnModel& model, std::uint64_t seed,
                            const AdamConfig& adam = {});

// CSV with header "step,split,loss,accuracy,mAP,learning_rate".
std::string metrics_csv(const MetricsHistory& history);
void write_metrics_csv(const MetricsHistory& history, const std::filesystem::path& path);
MetricsHistory parse_metrics_csv(const std::string& text);

// Deterministic split of a dataset: the first round(fraction * size)
// entries of a seeded permutation go to the first part.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double fraction, std::uint64_t seed);

}  // namespace hcn

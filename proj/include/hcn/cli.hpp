// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations behind the hcn executable. Each writes its
// artifacts under the run's output directory and returns what it reported.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hcn/checkpoint.hpp"
#include "hcn/config.hpp"
#include "hcn/skeleton.hpp"
#include "hcn/train.hpp"

namespace hcn {

// Log to stderr; the level comes from SPDLOG_LEVEL (default info).
void init_logging(const std::string& default_level = "info");

struct DataSplits {
  Dataset train;
  Dataset val;
};

// Loads or generates the configured data and splits it. Detection runs
// without data.val_path evaluate on the training sequences.
DataSplits load_data(const RunConfig& config);

struct TrainSummary {
  std::string metric;  // "accuracy" or "mAP"
  double best = 0.0;
  std::uint64_t best_step = 0;
  double final_value = 0.0;
  std::uint64_t steps = 0;
  double wall_time = 0.0;  // seconds
  MetricsHistory history;
};

// Writes metrics.csv, best.ckpt, final.ckpt, config.json and summary.json
// into config.output_dir.
TrainSummary cmd_train(const RunConfig& config);
std::string summary_json(const TrainSummary& summary);

struct EvalReport {
  std::string metric;
  double value = 0.0;  // accuracy or mAP
  double loss = 0.0;   // NaN for detection
  std::size_t samples = 0;
  std::string split;
};

// Evaluates a checkpoint on `data` when given, otherwise on the "train" or
// "val" split rebuilt from the checkpoint's own config.
EvalReport cmd_eval(const std::filesystem::path& checkpoint,
                    const std::optional<std::filesystem::path>& data,
                    const std::string& split = "val");
std::string eval_report_json(const EvalReport& report);

struct Prediction {
  std::string id;
  std::vector<std::pair<std::size_t, double>> top;  // (class, probability)
};

// Top-k classes and probabilities for every sample in a JSON Lines file.
std::vector<Prediction> cmd_predict(const std::filesystem::path& checkpoint,
                                    const std::filesystem::path& data, std::size_t top_k);
std::string predictions_jsonl(const std::vector<Prediction>& predictions);

// Detection JSON Lines for every sequence in `data`.
std::string cmd_detect(const std::filesystem::path& checkpoint,
                       const std::filesystem::path& data);

struct AblationRun {
  Variant variant = Variant::kGlobal;
  FusionMode fusion = FusionMode::kLateMax;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
};

struct AblationCell {
  Variant variant = Variant::kGlobal;
  FusionMode fusion = FusionMode::kLateMax;
  std::size_t n_seeds = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one seed
  double delta_vs_local = 0.0;  // mean(global) - mean(local) of this fusion mode
};

// Trains one (variant, fusion, seed) cell on already loaded data. Metrics go
// to `metrics_path` when it is non-empty.
AblationRun run_ablation_cell(const RunConfig& config, const DataSplits& data, Variant variant,
                              FusionMode fusion, std::uint64_t seed,
                              const std::filesystem::path& metrics_path = {});
std::vector<AblationCell> aggregate_ablation(const std::vector<AblationRun>& runs);

// Runs every cell and writes ablation.csv and ablation_runs.csv.
std::vector<AblationCell> cmd_ablate(const RunConfig& config);
std::string ablation_csv(const std::vector<AblationCell>& cells);
std::string ablation_runs_csv(const std::vector<AblationRun>& runs);

// Writes the configured synthetic dataset as JSON Lines; returns the count.
std::size_t cmd_synth(const RunConfig& config, const std::filesystem::path& out);

}  // namespace hcn

// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. The file is a JSON object; every section and key is
// optional except "seed", and unknown keys are rejected. See README.md for
// the full schema.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hcn/detection.hpp"
#include "hcn/model.hpp"
#include "hcn/optim.hpp"
#include "hcn/synth.hpp"
#include "hcn/train.hpp"

namespace hcn {

enum class Task { kRecognize, kDetect };

struct TrainingConfig {
  std::size_t batch_size = 64;
  std::uint64_t total_steps = 2000;
  std::uint64_t eval_every = 500;
  AdamConfig adam;
  double weight_decay = 0.001;  // on fc7.weight
};

struct DataConfig {
  std::optional<std::filesystem::path> path;      // JSON Lines dataset
  std::optional<std::filesystem::path> val_path;  // explicit validation set
  std::optional<SynthSpec> synth;                 // recognition synth
  std::optional<DetectionSynthSpec> detection_synth;
  double train_fraction = 0.8;  // used without val_path
  std::uint64_t split_seed = 0;
  // Evaluate on the training split (no held-out data).
  bool validate_on_train = false;
};

struct AblationConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<Variant> variants{Variant::kGlobal, Variant::kLocal};
  std::vector<FusionMode> fusions{FusionMode::kEarly, FusionMode::kLateMean,
                                  FusionMode::kLateConcat, FusionMode::kLateMax};
};

struct RunConfig {
  Task task = Task::kRecognize;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  ModelConfig model;
  DetectionConfig detection;  // backbone mirrors `model` for the detect task
  TrainingConfig training;
  DataConfig data;
  AblationConfig ablation;

  // Cross-field checks (model validity, one data source, paths exist
  // unless check_paths is false).
  void validate(bool check_paths = true) const;
};

std::string to_string(Task task);

// Parses and validates. Relative data paths resolve against `base_dir`.
// ConfigError names the offending key.
RunConfig parse_run_config(const std::string& text,
                           const std::filesystem::path& base_dir = std::filesystem::path(),
                           bool check_paths = true);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical JSON form (all keys, absolute data paths); parses back to an
// equal config.
std::string run_config_json(const RunConfig& config, int indent = 2);

}  // namespace hcn

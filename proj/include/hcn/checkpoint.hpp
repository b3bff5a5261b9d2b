// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container:
//   "hcn-checkpoint <version>\n"
//   "config <bytes>\n" <run config JSON> "\n"
//   "state <bytes>\n" <train state + best metric JSON> "\n"
//   "tensors <count>\n"
// followed by <count> records of
//   u32 name length, name bytes, u32 rank, u64 extents[rank], f64 data[]
// with all integers and doubles little-endian.

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hcn/config.hpp"
#include "hcn/optim.hpp"
#include "hcn/tensor.hpp"

namespace hcn {

inline constexpr int kCheckpointVersion = 1;

struct BestMetric {
  std::string name = "accuracy";  // or "mAP"
  double value = 0.0;
  std::uint64_t step = 0;
};

struct Checkpoint {
  RunConfig config;
  std::vector<std::pair<std::string, Tensor>> parameters;  // registry order
  TrainState state;
  BestMetric best;
};

Checkpoint make_checkpoint(const RunConfig& config, const ParameterStore& params,
                           const TrainState& state, const BestMetric& best);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// DataError on malformed files or an unknown version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint tensors into a store with the same names and shapes;
// ConfigError on any mismatch.
void restore_parameters(const Checkpoint& checkpoint, ParameterStore& params);

}  // namespace hcn

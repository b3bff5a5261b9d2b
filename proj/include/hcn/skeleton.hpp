// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hcn/ops.hpp"
#include "hcn/tensor.hpp"

namespace hcn {

// Groundtruth action instance in an untrimmed sequence, frames [start, end).
struct Segment {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t label = 0;
  friend bool operator==(const Segment&, const Segment&) = default;
};

// Per-person joint coordinates, each person a [frames, joints, coords] tensor.
// Trimmed samples carry a label; untrimmed detection sequences carry segments.
struct SkeletonSequence {
  std::string id;
  std::vector<Tensor> persons;
  std::optional<std::size_t> label;
  std::vector<Segment> segments;

  std::size_t frames() const { return persons.empty() ? 0 : persons.front().dim(0); }
  std::size_t joints() const { return persons.empty() ? 0 : persons.front().dim(1); }
  std::size_t coords() const { return persons.empty() ? 0 : persons.front().dim(2); }

  // Throws DataError unless every person is rank 3 with identical extents and
  // segments satisfy 0 <= start < end <= frames.
  void validate() const;
};

using Dataset = std::vector<SkeletonSequence>;

// motion[t] = x[t+1] - x[t] for t < T-1 and motion[T-1] = 0, per person.
Tensor compute_motion(const Tensor& person);
SkeletonSequence compute_motion(const SkeletonSequence& seq);

// round-half-up(ratio * frames), clamped to [1, frames].
std::size_t crop_length(std::size_t frames, double ratio);
SkeletonSequence crop_frames(const SkeletonSequence& seq, std::size_t start, std::size_t length);
// Ratio ~ U[0.5, 1], start uniform over the valid positions.
SkeletonSequence crop_train(const SkeletonSequence& seq, Rng& rng);
// Centered window of ratio 0.9; start = floor((T - length) / 2).
SkeletonSequence crop_eval(const SkeletonSequence& seq);

// Real persons first, then all-zero placeholders up to max_persons.
std::vector<Tensor> pad_persons(const SkeletonSequence& seq, std::size_t max_persons);

struct PreprocessOptions {
  std::size_t frames = 32;
  std::size_t max_persons = 2;
  // When false the output keeps the real person count (element-wise fusion
  // modes accept any count).
  bool pad = true;
};

// Network-ready tensors of one sample, each [persons, frames, joints, coords].
struct SampleTensors {
  Tensor raw;
  Tensor motion;
};

// crop (random in train mode, centered in eval mode) -> temporal resize ->
// motion -> person padding.
SampleTensors preprocess(const SkeletonSequence& seq, const PreprocessOptions& options,
                         ops::Mode mode, Rng& rng);

// Stacks per-person tensors [T, N, D] into [P, T, N, D].
Tensor stack_persons(const std::vector<Tensor>& persons);

}  // namespace hcn

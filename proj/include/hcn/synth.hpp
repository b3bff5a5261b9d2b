// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic skeleton data.
//
// Recognition: every joint rests at a fixed random position and drifts with a
// small random walk. For each k < classes the distant pair (k, N-1-k)
// oscillates with a shared random frequency; in a sample of class c the pair
// k == c moves in phase and every other pair has a phase offset drawn from
// [pi/2, 3pi/2]. Only the relative phase of a far-apart pair carries the
// label.
//
// Detection: untrimmed sequences of idle jitter with action segments spliced
// in. Each class has its own joint-pair pattern.

#pragma once

#include <cstddef>
#include <cstdint>

#include "hcn/skeleton.hpp"

namespace hcn {

enum class DirectionMode {
  kShared,    // all oscillations along (1, 1, 1) / sqrt(3)
  kPerJoint,  // a fixed random unit direction per joint
};

struct SynthSpec {
  std::size_t classes = 4;
  std::size_t samples_per_class = 200;
  std::size_t frames = 48;
  std::size_t joints = 12;
  std::size_t persons = 1;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
  double amplitude = 0.5;
  double walk_sigma = 0.02;
  DirectionMode directions = DirectionMode::kShared;

  // Throws UsageError (classes < 2, joints < 6, too few joints for the
  // class count, zero frames/persons/samples).
  void validate() const;
};

// Samples ordered by class; ids "synth-<index>".
Dataset synth_generate(const SynthSpec& spec);

struct DetectionSynthSpec {
  std::size_t sequences = 5;
  std::size_t classes = 3;
  std::size_t joints = 12;
  std::size_t frames = 400;
  std::size_t actions_per_sequence = 3;
  std::size_t min_action = 50;
  std::size_t max_action = 100;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

// Segments are disjoint, sorted and separated by idle gaps.
Dataset synth_detection(const DetectionSynthSpec& spec);

}  // namespace hcn

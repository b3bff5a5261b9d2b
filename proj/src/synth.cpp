// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "hcn/error.hpp"

namespace hcn {
namespace {

using Vec3 = std::array<double, 3>;

Vec3 random_direction(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  while (true) {
    Vec3 v{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len > 1e-6) return {v[0] / len, v[1] / len, v[2] / len};
  }
}

// Offsets joint j of a [T, N, 3] tensor by amp * sin(omega t + phase) * dir.
void add_oscillation(Tensor& person, std::size_t joint, double amp, double omega, double phase,
                     const Vec3& dir, std::size_t begin, std::size_t end) {
  const std::size_t joints = person.dim(1);
  for (std::size_t t = begin; t < end; ++t) {
    const double s = amp * std::sin(omega * static_cast<double>(t - begin) + phase);
    double* p = person.raw() + (t * joints + joint) * 3;
    for (std::size_t d = 0; d < 3; ++d) p[d] += s * dir[d];
  }
}

Tensor idle_person(std::size_t frames, std::size_t joints, double walk_sigma, double noise_sigma,
                   Rng& rng) {
  std::normal_distribution<double> rest(0.0, 1.0);
  Tensor person({frames, joints, 3});
  std::vector<double> pos(joints * 3);
  for (double& v : pos) v = rest(rng);
  std::normal_distribution<double> walk(0.0, walk_sigma > 0 ? walk_sigma : 1.0);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t e = 0; e < pos.size(); ++e) {
      if (t > 0 && walk_sigma > 0) pos[e] += walk(rng);
      person[t * pos.size() + e] = pos[e];
    }
  }
  if (noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (double& v : person.data()) v += noise(rng);
  }
  return person;
}

}  // namespace

void SynthSpec::validate() const {
  if (classes < 2) throw UsageError("synth: classes must be >= 2");
  if (joints < 6) throw UsageError("synth: joints must be >= 6");
  if (2 * classes > joints) {
    throw UsageError("synth: " + std::to_string(joints) + " joints cannot hold " +
                     std::to_string(classes) + " disjoint joint pairs (need joints >= 2 * classes)");
  }
  if (frames < 2) throw UsageError("synth: frames must be >= 2");
  if (persons == 0) throw UsageError("synth: persons must be >= 1");
  if (samples_per_class == 0) throw UsageError("synth: samples_per_class must be >= 1");
  if (noise_sigma < 0 || walk_sigma < 0 || amplitude <= 0) {
    throw UsageError("synth: noise and walk sigmas must be >= 0, amplitude > 0");
  }
}

Dataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Vec3> joint_dirs(spec.joints);
  for (Vec3& d : joint_dirs) d = random_direction(rng);
  const double inv = 1.0 / std::sqrt(3.0);
  const Vec3 shared{inv, inv, inv};
  const double pi = std::numbers::pi;
  std::uniform_real_distribution<double> omega_dist(2 * pi / 16, 2 * pi / 8);
  std::uniform_real_distribution<double> phase_dist(0.0, 2 * pi);
  std::uniform_real_distribution<double> offset_dist(0.5 * pi, 1.5 * pi);

  Dataset out;
  out.reserve(spec.classes * spec.samples_per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      SkeletonSequence seq;
      seq.id = "synth-" + std::to_string(out.size());
      seq.label = c;
      for (std::size_t p = 0; p < spec.persons; ++p) {
        Tensor person = idle_person(spec.frames, spec.joints, spec.walk_sigma, 0.0, rng);
        for (std::size_t k = 0; k < spec.classes; ++k) {
          const double omega = omega_dist(rng);
          const double phase = phase_dist(rng);
          const double offset = k == c ? 0.0 : offset_dist(rng);
          const std::size_t a = k, b = spec.joints - 1 - k;
          const bool shared_dir = spec.directions == DirectionMode::kShared;
          add_oscillation(person, a, spec.amplitude, omega, phase,
                          shared_dir ? shared : joint_dirs[a], 0, spec.frames);
          add_oscillation(person, b, spec.amplitude, omega, phase + offset,
                          shared_dir ? shared : joint_dirs[b], 0, spec.frames);
        }
        if (spec.noise_sigma > 0) {
          std::normal_distribution<double> noise(0.0, spec.noise_sigma);
          for (double& v : person.data()) v += noise(rng);
        }
        seq.persons.push_back(std::move(person));
      }
      out.push_back(std::move(seq));
    }
  }
  return out;
}

void DetectionSynthSpec::validate() const {
  if (sequences == 0 || classes == 0) throw UsageError("detection synth: need sequences and classes");
  if (2 * classes > joints) throw UsageError("detection synth: joints must be >= 2 * classes");
  if (min_action == 0 || min_action > max_action) {
    throw UsageError("detection synth: need 0 < min_action <= max_action");
  }
  if (actions_per_sequence * max_action + (actions_per_sequence + 1) * min_action / 2 > frames) {
    throw UsageError("detection synth: " + std::to_string(actions_per_sequence) +
                     " actions of up to " + std::to_string(max_action) + " frames do not fit in " +
                     std::to_string(frames) + " frames with idle gaps");
  }
}

Dataset synth_detection(const DetectionSynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double pi = std::numbers::pi;
  std::uniform_int_distribution<std::size_t> length_dist(spec.min_action, spec.max_action);
  std::uniform_int_distribution<std::size_t> class_dist(0, spec.classes - 1);
  std::uniform_real_distribution<double> phase_dist(0.0, 2 * pi);
  const double inv = 1.0 / std::sqrt(3.0);
  const Vec3 dir{inv, inv, inv};

  Dataset out;
  for (std::size_t i = 0; i < spec.sequences; ++i) {
    SkeletonSequence seq;
    seq.id = "untrimmed-" + std::to_string(i);
    Tensor person = idle_person(spec.frames, spec.joints, 0.0, spec.noise_sigma, rng);
    std::vector<std::size_t> lengths(spec.actions_per_sequence);
    std::size_t busy = 0;
    for (std::size_t& l : lengths) busy += (l = length_dist(rng));
    // Distribute the idle frames over the gaps before, between and after.
    std::vector<double> weights(spec.actions_per_sequence + 1);
    std::uniform_real_distribution<double> w(0.5, 1.5);
    double total = 0.0;
    for (double& v : weights) total += (v = w(rng));
    const std::size_t idle = spec.frames - busy;
    std::size_t cursor = 0;
    for (std::size_t a = 0; a < spec.actions_per_sequence; ++a) {
      cursor += static_cast<std::size_t>(std::floor(idle * weights[a] / total));
      const std::size_t cls = a < spec.classes && i == 0 ? a : class_dist(rng);
      const std::size_t start = cursor, end = cursor + lengths[a];
      const double omega = 2 * pi / (8.0 + 6.0 * static_cast<double>(cls));
      const double phase = phase_dist(rng);
      add_oscillation(person, cls, 0.6, omega, phase, dir, start, end);
      add_oscillation(person, spec.joints - 1 - cls, 0.6, omega, phase, dir, start, end);
      seq.segments.push_back(Segment{start, end, cls});
      cursor = end;
    }
    seq.persons.push_back(std::move(person));
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace hcn

// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hcn/error.hpp"

namespace hcn {

void SkeletonSequence::validate() const {
  const std::string who = "sample '" + id + "'";
  if (persons.empty()) throw DataError(who + " has no persons");
  const Shape& ref = persons.front().shape();
  if (ref.size() != 3) throw DataError(who + ": person tensor must be [frames, joints, coords]");
  for (std::size_t p = 1; p < persons.size(); ++p) {
    if (persons[p].shape() != ref) {
      throw DataError(who + ": person " + std::to_string(p) + " has shape " +
                      shape_str(persons[p].shape()) + ", person 0 has " + shape_str(ref));
    }
  }
  for (const Segment& s : segments) {
    if (!(s.start < s.end && s.end <= ref[0])) {
      throw DataError(who + ": segment [" + std::to_string(s.start) + ", " +
                      std::to_string(s.end) + ") outside [0, " + std::to_string(ref[0]) + "]");
    }
  }
}

Tensor compute_motion(const Tensor& person) {
  if (person.rank() < 1 || person.dim(0) == 0) {
    throw ShapeError("compute_motion: sequence needs at least one frame");
  }
  const std::size_t frames = person.dim(0);
  const std::size_t frame_size = person.numel() / frames;
  Tensor motion(person.shape());
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    const double* a = person.raw() + t * frame_size;
    const double* b = a + frame_size;
    double* m = motion.raw() + t * frame_size;
    for (std::size_t e = 0; e < frame_size; ++e) m[e] = b[e] - a[e];
  }
  return motion;
}

SkeletonSequence compute_motion(const SkeletonSequence& seq) {
  SkeletonSequence out = seq;
  for (Tensor& p : out.persons) p = compute_motion(p);
  return out;
}

std::size_t crop_length(std::size_t frames, double ratio) {
  const auto len = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(frames) + 0.5));
  return std::clamp<std::size_t>(len, 1, std::max<std::size_t>(frames, 1));
}

SkeletonSequence crop_frames(const SkeletonSequence& seq, std::size_t start, std::size_t length) {
  const std::size_t frames = seq.frames();
  if (length == 0 || start + length > frames) {
    throw UsageError("crop_frames: window [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") outside " + std::to_string(frames) +
                     " frames");
  }
  SkeletonSequence out;
  out.id = seq.id;
  out.label = seq.label;
  for (const Tensor& p : seq.persons) {
    Shape shape = p.shape();
    shape[0] = length;
    const std::size_t frame_size = p.numel() / frames;
    std::vector<double> data(p.raw() + start * frame_size,
                             p.raw() + (start + length) * frame_size);
    out.persons.emplace_back(std::move(shape), std::move(data));
  }
  for (const Segment& s : seq.segments) {
    const std::size_t a = std::max(s.start, start), b = std::min(s.end, start + length);
    if (a < b) out.segments.push_back(Segment{a - start, b - start, s.label});
  }
  return out;
}

SkeletonSequence crop_train(const SkeletonSequence& seq, Rng& rng) {
  const std::size_t frames = seq.frames();
  std::uniform_real_distribution<double> ratio_dist(0.5, 1.0);
  const std::size_t length = crop_length(frames, ratio_dist(rng));
  std::uniform_int_distribution<std::size_t> start_dist(0, frames - length);
  return crop_frames(seq, start_dist(rng), length);
}

SkeletonSequence crop_eval(const SkeletonSequence& seq) {
  const std::size_t frames = seq.frames();
  const std::size_t length = crop_length(frames, 0.9);
  return crop_frames(seq, (frames - length) / 2, length);
}

std::vector<Tensor> pad_persons(const SkeletonSequence& seq, std::size_t max_persons) {
  if (seq.persons.empty()) throw DataError("sample '" + seq.id + "' has no persons");
  if (seq.persons.size() > max_persons) {
    throw DataError("sample '" + seq.id + "' has " + std::to_string(seq.persons.size()) +
                    " persons, more than the maximum of " + std::to_string(max_persons));
  }
  std::vector<Tensor> out = seq.persons;
  while (out.size() < max_persons) out.emplace_back(seq.persons.front().shape());
  return out;
}

Tensor stack_persons(const std::vector<Tensor>& persons) {
  if (persons.empty()) throw ShapeError("stack_persons: no persons");
  Shape shape = persons.front().shape();
  shape.insert(shape.begin(), persons.size());
  Tensor out(shape);
  const std::size_t block = persons.front().numel();
  for (std::size_t p = 0; p < persons.size(); ++p) {
    if (persons[p].shape() != persons.front().shape()) {
      throw ShapeError("stack_persons: person " + std::to_string(p) + " shape mismatch");
    }
    std::copy_n(persons[p].raw(), block, out.raw() + p * block);
  }
  return out;
}

SampleTensors preprocess(const SkeletonSequence& seq, const PreprocessOptions& options,
                         ops::Mode mode, Rng& rng) {
  seq.validate();
  SkeletonSequence cropped = mode == ops::Mode::kTrain ? crop_train(seq, rng) : crop_eval(seq);
  for (Tensor& p : cropped.persons) p = ops::resize_temporal_bilinear(p, options.frames);
  std::vector<Tensor> raw = options.pad ? pad_persons(cropped, options.max_persons)
                                        : cropped.persons;
  if (!options.pad && raw.size() > options.max_persons) {
    throw DataError("sample '" + seq.id + "' has more persons than the configured maximum");
  }
  std::vector<Tensor> motion;
  motion.reserve(raw.size());
  for (const Tensor& p : raw) motion.push_back(compute_motion(p));
  return SampleTensors{stack_persons(raw), stack_persons(motion)};
}

}  // namespace hcn

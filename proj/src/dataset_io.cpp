// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/dataset_io.hpp"

#include <fstream>

#include "json.hpp"

#include "hcn/error.hpp"

namespace hcn {
namespace {

using nlohmann::json;

std::string where(std::size_t line) {
  return line == 0 ? std::string("record") : "line " + std::to_string(line);
}

}  // namespace

SkeletonSequence parse_sample(const std::string& text, std::size_t line) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(where(line) + ": malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw DataError(where(line) + ": record must be a JSON object");
  for (const char* key : {"id", "persons"}) {
    if (!j.contains(key)) throw DataError(where(line) + ": missing field '" + key + "'");
  }
  SkeletonSequence s;
  if (!j["id"].is_string()) throw DataError(where(line) + ": 'id' must be a string");
  s.id = j["id"].get<std::string>();
  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_number_integer() || j["label"].get<long long>() < 0) {
      throw DataError(where(line) + ": 'label' must be a non-negative integer or null");
    }
    s.label = j["label"].get<std::size_t>();
  }
  if (j.contains("segments") && !j["segments"].is_null()) {
    for (const json& seg : j["segments"]) {
      if (!seg.is_array() || seg.size() != 3) {
        throw DataError(where(line) + ": each segment must be [start, end, class]");
      }
      for (const json& v : seg) {
        if (!v.is_number_integer() || v.get<long long>() < 0) {
          throw DataError(where(line) + ": segment entries must be non-negative integers");
        }
      }
      s.segments.push_back(
          Segment{seg[0].get<std::size_t>(), seg[1].get<std::size_t>(), seg[2].get<std::size_t>()});
    }
  }
  // Neither label nor segments: unannotated input for predict/detect.
  // Training and evaluation reject such samples themselves.
  const json& persons = j["persons"];
  if (!persons.is_array()) throw DataError(where(line) + ": 'persons' must be an array");
  for (std::size_t p = 0; p < persons.size(); ++p) {
    const json& frames = persons[p];
    if (!frames.is_array() || frames.empty()) {
      throw DataError(where(line) + ": person " + std::to_string(p) + " has no frames");
    }
    const std::size_t joints = frames[0].is_array() ? frames[0].size() : 0;
    const std::size_t coords = joints > 0 && frames[0][0].is_array() ? frames[0][0].size() : 0;
    if (joints == 0 || coords == 0) {
      throw DataError(where(line) + ": person " + std::to_string(p) + " has empty frames");
    }
    std::vector<double> data;
    data.reserve(frames.size() * joints * coords);
    for (std::size_t t = 0; t < frames.size(); ++t) {
      if (!frames[t].is_array() || frames[t].size() != joints) {
        throw DataError(where(line) + ": inconsistent joint count in person " +
                        std::to_string(p) + " frame " + std::to_string(t));
      }
      for (const json& joint : frames[t]) {
        if (!joint.is_array() || joint.size() != coords) {
          throw DataError(where(line) + ": inconsistent coordinate count in person " +
                          std::to_string(p) + " frame " + std::to_string(t));
        }
        for (const json& v : joint) {
          if (!v.is_number()) throw DataError(where(line) + ": coordinates must be numbers");
          data.push_back(v.get<double>());
        }
      }
    }
    s.persons.emplace_back(Shape{frames.size(), joints, coords}, std::move(data));
  }
  try {
    s.validate();
  } catch (const DataError& e) {
    throw DataError(where(line) + ": " + e.what());
  }
  return s;
}

std::string serialize_sample(const SkeletonSequence& s) {
  json j;
  j["id"] = s.id;
  j["label"] = s.label ? json(*s.label) : json(nullptr);
  if (s.segments.empty()) {
    j["segments"] = nullptr;
  } else {
    json segs = json::array();
    for (const Segment& seg : s.segments) segs.push_back({seg.start, seg.end, seg.label});
    j["segments"] = std::move(segs);
  }
  json persons = json::array();
  for (const Tensor& p : s.persons) {
    json frames = json::array();
    const std::size_t joints = p.dim(1), coords = p.dim(2);
    for (std::size_t t = 0; t < p.dim(0); ++t) {
      json frame = json::array();
      for (std::size_t n = 0; n < joints; ++n) {
        json joint = json::array();
        for (std::size_t d = 0; d < coords; ++d) joint.push_back(p[(t * joints + n) * coords + d]);
        frame.push_back(std::move(joint));
      }
      frames.push_back(std::move(frame));
    }
    persons.push_back(std::move(frames));
  }
  j["persons"] = std::move(persons);
  return j.dump();
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  Dataset out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_sample(text, line));
  }
  return out;
}

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file " + path.string());
  for (const SkeletonSequence& s : dataset) out << serialize_sample(s) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace hcn

// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON Lines sample format, one object per line:
//   {"id": str, "label": int|null, "segments": [[start,end,class],...]|null,
//    "persons": [[[[x,y,z] x joints] x frames] x persons]}

#pragma once

#include <filesystem>
#include <string>

#include "hcn/skeleton.hpp"

namespace hcn {

Dataset load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);

// Single-record forms; `line` is only used in error messages.
SkeletonSequence parse_sample(const std::string& text, std::size_t line = 0);
std::string serialize_sample(const SkeletonSequence& sample);

}  // namespace hcn

// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "retlab/model.hpp"
#include "retlab/task.hpp"

namespace retlab {

void to_json(nlohmann::json& j, const TaskConfig& c);
void from_json(const nlohmann::json& j, TaskConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

/// Recursively overlays `patch` onto `base` (objects merge, everything else replaces).
void merge_json(nlohmann::json& base, const nlohmann::json& patch);

/// FNV-1a 64 of the canonical dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace retlab

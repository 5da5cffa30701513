// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Binary containers for datasets and checkpoints.
//
// Both share one layout:
//
//   offset 0   8 bytes   magic ("RETLDSET" or "RETLCKPT")
//   offset 8   u32 LE    format version (currently 1)
//   offset 12  u64 LE    header length H in bytes
//   offset 20  H bytes   UTF-8 JSON header
//   20 + H     ...       little-endian f32 blobs, back to back
//
// The header's "tensors" table lists {name, shape, offset, count} for every
// blob; offsets are in bytes relative to the start of the blob region.

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "retlab/model.hpp"
#include "retlab/optim.hpp"
#include "retlab/task.hpp"

namespace retlab {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr uint32_t kFormatVersion = 1;

struct Dataset {
  TaskConfig config;
  std::vector<EncodedExample> examples;
};

void save_dataset(const std::filesystem::path& path, const TaskConfig& config,
                  std::span<const EncodedExample> examples);
Dataset load_dataset(const std::filesystem::path& path);

struct ModelCheckpoint {
  ModelParams params;
  TaskConfig task;
  AdamState optimizer;
  int64_t epoch = 0;
  int64_t step = 0;
  uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);

/// Loads a checkpoint. When `expected` is given, its model config must match
/// the stored one exactly or ConfigError is thrown.
ModelCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

/// Reads only the JSON header of either container.
nlohmann::json read_container_header(const std::filesystem::path& path);

}  // namespace retlab

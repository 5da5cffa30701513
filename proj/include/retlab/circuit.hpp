// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Circuit hypotheses over attention heads, attention-replacement ablations,
// attention-map export and emergence tracking across checkpoints.

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "retlab/io.hpp"
#include "retlab/model.hpp"
#include "retlab/task.hpp"

namespace retlab {

/// A role pattern. Pair roles carry a step that is either absolute, any step
/// ("*", source side), or relative to the source step ("*", "*-1", "*+1",
/// destination side).
struct RolePattern {
  enum class Kind : uint8_t { PairFirst, PairSecond, Query, PrevToken, Self };
  Kind kind = Kind::Query;
  bool wildcard = false;
  int step = 0;  // absolute step, or offset when wildcard

  static RolePattern parse(const std::string& text);
  std::string str() const;
  bool operator==(const RolePattern&) const = default;
};

struct CircuitPath {
  std::string id;
  int layer = 0;
  int head = 0;
  RolePattern src;
  RolePattern dst;
  /// Chain position this path serves (1 = first hop).
  int hop = 1;
};

enum class HeadMode : uint8_t { Keep, Uniform, Identity, OneHot };

std::string head_mode_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& text);

struct CircuitSpec {
  std::vector<CircuitPath> paths;
  HeadMode background = HeadMode::Uniform;

  void validate(const ModelConfig& model, const TaskConfig& task) const;
};

void to_json(nlohmann::json& j, const CircuitSpec& c);
void from_json(const nlohmann::json& j, CircuitSpec& c);
CircuitSpec load_circuit(const std::filesystem::path& path);

/// Positions whose role matches `role`. PrevToken and Self match every position.
std::vector<int64_t> resolve_roles(std::span<const Role> roles, const RolePattern& role, const TaskConfig& task);

/// (source, destination) pairs of a path in one example. Sources whose
/// destination does not exist are skipped.
std::vector<std::pair<int64_t, int64_t>> resolve_path(std::span<const Role> roles, const CircuitPath& path,
                                                      const TaskConfig& task);

struct HeadAblation {
  HeadMode mode = HeadMode::Keep;
  std::vector<CircuitPath> paths;  // OneHot only
};

/// One entry per (layer, head), layer-major.
struct AblationSpec {
  int layers = 0;
  int heads = 0;
  std::vector<HeadAblation> entries;

  static AblationSpec keep_all(const ModelConfig& model);
  HeadAblation& at(int layer, int head) { return entries[static_cast<size_t>(layer * heads + head)]; }
  const HeadAblation& at(int layer, int head) const { return entries[static_cast<size_t>(layer * heads + head)]; }
};

/// Paths become OneHot heads; every other head takes the background.
/// `skip` removes one path (leave-one-out); a head left without paths falls
/// back to the background.
AblationSpec circuit_ablation(const CircuitSpec& circuit, const ModelConfig& model,
                              std::optional<size_t> skip = std::nullopt);

/// Replacement weights for every non-Keep head over a batch.
std::vector<HeadPatch> build_patches(const AblationSpec& spec, const Batch& batch, const TaskConfig& task,
                                     bool causal);

ForwardResult ablate_forward(const ModelParams& params, const Batch& batch, const TaskConfig& task,
                             const AblationSpec& spec, bool capture = false);

struct CircuitReport {
  double unablated_mse = 0.0;
  double combined_mse = 0.0;
  std::vector<std::string> path_ids;
  std::vector<double> knockout_mse;  // one per path
};

CircuitReport validate_circuit(const ModelParams& params, const CircuitSpec& circuit, const Batch& val,
                               const TaskConfig& task);
void write_circuit_report_csv(const std::filesystem::path& path, const CircuitReport& report);

/// Mean attention over examples and resolved (src, dst) pairs of a path.
double path_attention(const AttentionCapture& capture, const Batch& batch, const CircuitPath& path,
                      const TaskConfig& task);

struct PathTrace {
  std::string path_id;
  int hop = 1;
  std::vector<double> epochs;
  std::vector<double> values;
};

struct EmergenceResult {
  std::vector<PathTrace> traces;
  std::vector<std::string> warnings;  // skipped checkpoints
};

/// Evaluates every checkpoint in `dir` (sorted by epoch) on `n_examples`
/// validation sequences.
EmergenceResult emergence_trace(const std::filesystem::path& dir, const CircuitSpec& circuit, int64_t n_examples = 32);
void write_trace_csv(const std::filesystem::path& path, const std::vector<PathTrace>& traces);

/// First epoch where the linearly interpolated series reaches `threshold` from
/// below; the first epoch itself when the series starts at or above it.
std::optional<double> crossing_epoch(std::span<const double> epochs, std::span<const double> values,
                                     double threshold = 0.5);
std::optional<double> crossing_epoch(const PathTrace& trace, double threshold = 0.5);

struct MapExportOptions {
  int64_t per_example_limit = 4;
  bool svg = true;
};

/// Writes averaged and per-example L x L maps for every layer and head as CSV
/// (and SVG heatmaps). Returns the written files.
std::vector<std::filesystem::path> export_attention_maps(const ModelParams& params, const Batch& batch,
                                                         const std::filesystem::path& out_dir,
                                                         const MapExportOptions& options = {});

/// Mean of per-example maps for one layer and head.
std::vector<float> average_map(const AttentionCapture& capture, int layer, int head);

/// Grayscale heatmap, value 1 black.
std::string heatmap_svg(std::span<const float> map, int64_t rows, int64_t cols, const std::string& title);

}  // namespace retlab

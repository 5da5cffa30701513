// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Training loop over a fixed corpus with periodic validation, per-position
// partial losses, optional epoch checkpoints and a layer/formulation sweep.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "retlab/io.hpp"
#include "retlab/model.hpp"
#include "retlab/task.hpp"

namespace retlab {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  TaskConfig task;
  ModelConfig model;
  int64_t steps = 1000;
  int64_t batch_size = 128;
  double lr = 1e-3;
  double weight_decay = 0.1;
  int64_t train_examples = 16384;
  int64_t val_examples = 512;
  int64_t val_every = 10;
  /// Drives data, initialization and shuffling; overrides task.seed.
  uint64_t seed = 0;
  /// Write a checkpoint every this many epochs (0 disables). Epoch 0 is the
  /// initialization.
  int64_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  /// Abort when the training loss stays above factor x the first loss for
  /// `divergence_patience` consecutive steps.
  double divergence_factor = 10.0;
  int64_t divergence_patience = 100;

  /// Fills model input/output widths from the task and validates everything.
  void resolve();
  void validate() const;
  int64_t steps_per_epoch() const { return std::max<int64_t>(1, train_examples / batch_size); }
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

struct EvalRecord {
  int64_t step = 0;
  double epoch = 0.0;
  double val_loss = 0.0;
  /// One value per chain position for IC runs; empty otherwise.
  std::vector<double> partial;
};

struct RunMetrics {
  std::vector<double> train_loss;  // one per step
  std::vector<EvalRecord> evals;   // step 0, then every val_every steps and the last step
  int64_t steps_per_epoch = 1;
  std::vector<std::filesystem::path> checkpoints;

  bool operator==(const RunMetrics&) const = default;
};

struct RunResult {
  RunMetrics metrics;
  ModelCheckpoint final_checkpoint;
};

/// Invoked after each evaluation; returning false stops training early.
using EvalHook = std::function<bool(const EvalRecord&)>;

RunResult train(RunConfig run, const EvalHook& hook = {});

/// The D per-position losses of IC-shaped predictions: value j is the MSE over
/// columns [jK, (j+1)K).
std::vector<double> partial_losses(const Tensor& pred, const Tensor& target, int steps, int embed_dim);

/// Mean of the last 100 validation losses.
double final_loss(const RunMetrics& metrics);
double final_loss(std::span<const double> val_losses, size_t window = 100);

/// First evaluation step whose partial loss j is below the threshold, per position.
std::vector<std::optional<int64_t>> partial_crossing_steps(const RunMetrics& metrics, double threshold = 0.5);

void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics, int steps);

/// Mean squared error of a model over a stacked batch.
double evaluate_mse(const ModelParams& params, const Batch& batch);

struct SweepConfig {
  RunConfig base;
  std::vector<bool> formulations{true, false};  // ic flags
  std::vector<int> layers{1, 2};
  std::vector<uint64_t> seeds{0};
  /// Final-loss window; falls back to all evaluations when fewer exist.
  size_t window = 100;
  std::filesystem::path out_dir;
};

struct SweepCell {
  bool ic = true;
  int layers = 1;
  uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double final_loss = 0.0;
  std::vector<double> partial;
};

struct SweepRow {
  bool ic = true;
  int layers = 1;
  int n_ok = 0;
  double mean_final_loss = 0.0;
  std::vector<double> mean_partial;
};

struct SweepReport {
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;
};

SweepReport sweep(const SweepConfig& config);
SweepReport aggregate_sweep(std::vector<SweepCell> cells);
void write_sweep_csv(const std::filesystem::path& path, const SweepReport& report);

}  // namespace retlab

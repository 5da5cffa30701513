// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Minimal retrieval task: N chains x_0 -> x_1 -> ... -> x_D of random
// K-dimensional symbols, presented as interleaved pairs (x_{k-1}, x_k) grouped
// by step, followed by the N query symbols x_0. Each token is concatenated with
// a K-dimensional rotary positional encoding.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "retlab/rng.hpp"
#include "retlab/tensor.hpp"

namespace retlab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Order of the pair blocks in the sequence.
enum class PairOrder : uint8_t { Ascending, Descending };
/// Index fed to the positional encoding: the token position, or the pair index
/// shared by both tokens of a pair.
enum class PositionIndexing : uint8_t { PerToken, PerPair };

struct TaskConfig {
  int n_chains = 4;
  int steps = 3;
  int embed_dim = 4;
  bool ic = true;
  double rotary_base = 10000.0;
  uint64_t seed = 0;
  PairOrder pair_order = PairOrder::Ascending;
  PositionIndexing positions = PositionIndexing::PerToken;

  void validate() const;
  int seq_len() const { return n_chains * (2 * steps + 1); }
  int input_dim() const { return 2 * embed_dim; }
  int target_dim() const { return ic ? steps * embed_dim : embed_dim; }

  bool operator==(const TaskConfig&) const = default;
};

/// Symbols and orderings of one example.
struct ChainInstance {
  int n_chains = 0;
  int steps = 0;
  int embed_dim = 0;
  /// [chain][step 0..D][K], row-major.
  std::vector<float> embeddings;
  /// pair_order[k-1] is the chain order inside the step-k block.
  std::vector<std::vector<int>> pair_order;
  std::vector<int> query_order;

  std::span<const float> symbol(int chain, int step) const;
  bool operator==(const ChainInstance&) const = default;
};

enum class RoleKind : uint8_t { PairFirst, PairSecond, Query };

/// What a sequence position holds. `step` is 1..D for pair roles and 0 for queries.
struct Role {
  RoleKind kind = RoleKind::Query;
  int chain = 0;
  int step = 0;
  bool operator==(const Role&) const = default;
};

std::string role_string(const Role& role);

struct EncodedExample {
  Tensor inputs;   // [L, 2K]
  Tensor targets;  // [N, T]
  std::vector<Role> roles;
};

/// Examples stacked for the model: inputs [B*L, 2K], targets [B*N, T].
struct Batch {
  int64_t size = 0;
  int64_t seq_len = 0;
  int64_t n_query = 0;
  Tensor inputs;
  Tensor targets;
  std::vector<std::vector<Role>> roles;
};

ChainInstance gen_instance(const TaskConfig& config, Rng& rng);

/// Rotary encoding of an integer position: (cos p*theta_j, sin p*theta_j) pairs
/// with theta_j = base^(-2j/K).
std::vector<float> rotary_encoding(int64_t position, int dims, double base);

EncodedExample encode_instance(const ChainInstance& instance, const TaskConfig& config);

/// Example `index` of `stream`, independent of every other index.
ChainInstance gen_indexed_instance(const TaskConfig& config, uint64_t stream, uint64_t index);

/// `count` examples starting at `first` of the given stream.
std::vector<EncodedExample> gen_examples(const TaskConfig& config, uint64_t stream, uint64_t first, int64_t count);

/// A batch of independent examples whose per-example seeds come from `rng`.
Batch gen_batch(const TaskConfig& config, Rng& rng, int64_t batch_size);

Batch stack_examples(std::span<const EncodedExample> examples);

}  // namespace retlab

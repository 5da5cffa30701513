// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace retlab {

void TaskConfig::validate() const {
  if (n_chains < 1) throw ConfigError("task: n_chains must be >= 1");
  if (steps < 1) throw ConfigError("task: steps must be >= 1");
  if (embed_dim < 2 || embed_dim % 2 != 0) throw ConfigError("task: embed_dim must be even and >= 2");
  if (!(rotary_base > 0.0)) throw ConfigError("task: rotary_base must be positive");
}

std::span<const float> ChainInstance::symbol(int chain, int step) const {
  const size_t offset = (static_cast<size_t>(chain) * static_cast<size_t>(steps + 1) + static_cast<size_t>(step)) *
                        static_cast<size_t>(embed_dim);
  return std::span<const float>(embeddings).subspan(offset, static_cast<size_t>(embed_dim));
}

std::string role_string(const Role& role) {
  switch (role.kind) {
    case RoleKind::PairFirst:
      return "PairFirst(c" + std::to_string(role.chain) + ",k" + std::to_string(role.step) + ")";
    case RoleKind::PairSecond:
      return "PairSecond(c" + std::to_string(role.chain) + ",k" + std::to_string(role.step) + ")";
    case RoleKind::Query:
      return "Query(c" + std::to_string(role.chain) + ")";
  }
  return "?";
}

ChainInstance gen_instance(const TaskConfig& config, Rng& rng) {
  config.validate();
  ChainInstance inst;
  inst.n_chains = config.n_chains;
  inst.steps = config.steps;
  inst.embed_dim = config.embed_dim;
  std::normal_distribution<float> normal(0.0f, 1.0f);
  inst.embeddings.resize(static_cast<size_t>(config.n_chains) * static_cast<size_t>(config.steps + 1) *
                         static_cast<size_t>(config.embed_dim));
  for (float& v : inst.embeddings) v = normal(rng);
  std::vector<int> identity(static_cast<size_t>(config.n_chains));
  std::iota(identity.begin(), identity.end(), 0);
  for (int k = 0; k < config.steps; ++k) {
    std::vector<int> perm = identity;
    std::shuffle(perm.begin(), perm.end(), rng);
    inst.pair_order.push_back(std::move(perm));
  }
  inst.query_order = identity;
  std::shuffle(inst.query_order.begin(), inst.query_order.end(), rng);
  return inst;
}

std::vector<float> rotary_encoding(int64_t position, int dims, double base) {
  if (dims < 2 || dims % 2 != 0) throw ConfigError("rotary_encoding: dimension must be even and >= 2");
  if (position < 0) throw ConfigError("rotary_encoding: position must be non-negative");
  std::vector<float> enc(static_cast<size_t>(dims));
  for (int j = 0; j < dims / 2; ++j) {
    const double theta = std::pow(base, -2.0 * j / dims);
    const double angle = static_cast<double>(position) * theta;
    enc[static_cast<size_t>(2 * j)] = static_cast<float>(std::cos(angle));
    enc[static_cast<size_t>(2 * j + 1)] = static_cast<float>(std::sin(angle));
  }
  return enc;
}

EncodedExample encode_instance(const ChainInstance& inst, const TaskConfig& config) {
  config.validate();
  if (inst.n_chains != config.n_chains || inst.steps != config.steps || inst.embed_dim != config.embed_dim) {
    throw ConfigError("encode_instance: instance does not match task config");
  }
  const int n = config.n_chains;
  const int d = config.steps;
  const int k_dim = config.embed_dim;
  const int len = config.seq_len();

  EncodedExample ex;
  ex.inputs = Tensor({len, 2 * k_dim});
  ex.targets = Tensor({n, config.target_dim()});
  ex.roles.reserve(static_cast<size_t>(len));

  int64_t pos = 0;
  auto put = [&](std::span<const float> token, int64_t pe_index, Role role) {
    float* row = ex.inputs.data() + pos * 2 * k_dim;
    std::copy(token.begin(), token.end(), row);
    const auto pe = rotary_encoding(pe_index, k_dim, config.rotary_base);
    std::copy(pe.begin(), pe.end(), row + k_dim);
    ex.roles.push_back(role);
    ++pos;
  };

  int64_t pair_index = 0;
  for (int b = 0; b < d; ++b) {
    const int step = config.pair_order == PairOrder::Ascending ? b + 1 : d - b;
    for (int chain : inst.pair_order[static_cast<size_t>(step - 1)]) {
      const bool per_pair = config.positions == PositionIndexing::PerPair;
      put(inst.symbol(chain, step - 1), per_pair ? pair_index : pos, Role{RoleKind::PairFirst, chain, step});
      put(inst.symbol(chain, step), per_pair ? pair_index : pos, Role{RoleKind::PairSecond, chain, step});
      ++pair_index;
    }
  }
  for (int i = 0; i < n; ++i) {
    const int chain = inst.query_order[static_cast<size_t>(i)];
    const bool per_pair = config.positions == PositionIndexing::PerPair;
    put(inst.symbol(chain, 0), per_pair ? pair_index++ : pos, Role{RoleKind::Query, chain, 0});
    float* target = ex.targets.data() + static_cast<int64_t>(i) * config.target_dim();
    if (config.ic) {
      for (int step = 1; step <= d; ++step) {
        const auto sym = inst.symbol(chain, step);
        std::copy(sym.begin(), sym.end(), target + (step - 1) * k_dim);
      }
    } else {
      const auto sym = inst.symbol(chain, d);
      std::copy(sym.begin(), sym.end(), target);
    }
  }
  return ex;
}

ChainInstance gen_indexed_instance(const TaskConfig& config, uint64_t stream, uint64_t index) {
  Rng rng(derive_seed(config.seed, stream, index));
  return gen_instance(config, rng);
}

std::vector<EncodedExample> gen_examples(const TaskConfig& config, uint64_t stream, uint64_t first, int64_t count) {
  std::vector<EncodedExample> out;
  out.reserve(static_cast<size_t>(std::max<int64_t>(count, 0)));
  for (int64_t i = 0; i < count; ++i) {
    out.push_back(encode_instance(gen_indexed_instance(config, stream, first + static_cast<uint64_t>(i)), config));
  }
  return out;
}

Batch gen_batch(const TaskConfig& config, Rng& rng, int64_t batch_size) {
  if (batch_size < 1) throw ConfigError("gen_batch: batch_size must be >= 1");
  const uint64_t base = rng();
  std::vector<EncodedExample> examples;
  examples.reserve(static_cast<size_t>(batch_size));
  for (int64_t i = 0; i < batch_size; ++i) {
    Rng ex_rng(derive_seed(base, streams::kGen, static_cast<uint64_t>(i)));
    examples.push_back(encode_instance(gen_instance(config, ex_rng), config));
  }
  return stack_examples(examples);
}

Batch stack_examples(std::span<const EncodedExample> examples) {
  if (examples.empty()) throw ConfigError("stack_examples: no examples");
  Batch b;
  b.size = static_cast<int64_t>(examples.size());
  b.seq_len = examples[0].inputs.dim(0);
  b.n_query = examples[0].targets.dim(0);
  const int64_t in_dim = examples[0].inputs.dim(1);
  const int64_t t_dim = examples[0].targets.dim(1);
  b.inputs = Tensor({b.size * b.seq_len, in_dim});
  b.targets = Tensor({b.size * b.n_query, t_dim});
  for (int64_t i = 0; i < b.size; ++i) {
    const auto& ex = examples[static_cast<size_t>(i)];
    if (ex.inputs.shape() != examples[0].inputs.shape() || ex.targets.shape() != examples[0].targets.shape()) {
      throw ConfigError("stack_examples: examples differ in shape");
    }
    std::copy(ex.inputs.values().begin(), ex.inputs.values().end(), b.inputs.data() + i * b.seq_len * in_dim);
    std::copy(ex.targets.values().begin(), ex.targets.values().end(), b.targets.data() + i * b.n_query * t_dim);
    b.roles.push_back(ex.roles);
  }
  return b;
}

}  // namespace retlab

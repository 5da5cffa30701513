// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/config_io.hpp"

#include <cstdio>
#include <fstream>

namespace retlab {

using nlohmann::json;

namespace {

template <typename V>
void read_opt(const json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

}  // namespace

void to_json(json& j, const TaskConfig& c) {
  j = json{{"n_chains", c.n_chains},
           {"steps", c.steps},
           {"embed_dim", c.embed_dim},
           {"ic", c.ic},
           {"rotary_base", c.rotary_base},
           {"seed", c.seed},
           {"pair_order", c.pair_order == PairOrder::Ascending ? "ascending" : "descending"},
           {"positions", c.positions == PositionIndexing::PerToken ? "per_token" : "per_pair"}};
}

void from_json(const json& j, TaskConfig& c) {
  read_opt(j, "n_chains", c.n_chains);
  read_opt(j, "steps", c.steps);
  read_opt(j, "embed_dim", c.embed_dim);
  read_opt(j, "ic", c.ic);
  read_opt(j, "rotary_base", c.rotary_base);
  read_opt(j, "seed", c.seed);
  if (auto it = j.find("pair_order"); it != j.end()) {
    const auto v = it->get<std::string>();
    if (v == "ascending") {
      c.pair_order = PairOrder::Ascending;
    } else if (v == "descending") {
      c.pair_order = PairOrder::Descending;
    } else {
      throw ConfigError("task.pair_order must be 'ascending' or 'descending'");
    }
  }
  if (auto it = j.find("positions"); it != j.end()) {
    const auto v = it->get<std::string>();
    if (v == "per_token") {
      c.positions = PositionIndexing::PerToken;
    } else if (v == "per_pair") {
      c.positions = PositionIndexing::PerPair;
    } else {
      throw ConfigError("task.positions must be 'per_token' or 'per_pair'");
    }
  }
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"layers", c.layers},       {"heads", c.heads},           {"residual_dim", c.residual_dim},
           {"head_dim", c.head_dim},   {"use_mlp", c.use_mlp},       {"mlp_hidden", c.mlp_hidden},
           {"input_dim", c.input_dim}, {"output_dim", c.output_dim}, {"causal", c.causal}};
}

void from_json(const json& j, ModelConfig& c) {
  read_opt(j, "layers", c.layers);
  read_opt(j, "heads", c.heads);
  read_opt(j, "residual_dim", c.residual_dim);
  read_opt(j, "head_dim", c.head_dim);
  read_opt(j, "use_mlp", c.use_mlp);
  read_opt(j, "mlp_hidden", c.mlp_hidden);
  read_opt(j, "input_dim", c.input_dim);
  read_opt(j, "output_dim", c.output_dim);
  read_opt(j, "causal", c.causal);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void merge_json(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_json(base[it.key()], *it);
    } else {
      base[it.key()] = *it;
    }
  }
}

std::string config_hash(const json& j) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace retlab

// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "retlab/config_io.hpp"

static_assert(std::endian::native == std::endian::little, "containers assume a little-endian host");

namespace retlab {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kDatasetMagic{'R', 'E', 'T', 'L', 'D', 'S', 'E', 'T'};
constexpr std::array<char, 8> kCheckpointMagic{'R', 'E', 'T', 'L', 'C', 'K', 'P', 'T'};

struct Blob {
  std::string name;
  std::vector<int64_t> shape;
  std::span<const float> data;
};

void write_container(const std::filesystem::path& path, const std::array<char, 8>& magic, json header,
                     const std::vector<Blob>& blobs) {
  json table = json::array();
  uint64_t offset = 0;
  for (const Blob& b : blobs) {
    table.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}, {"count", b.data.size()}});
    offset += b.data.size() * sizeof(float);
  }
  header["tensors"] = std::move(table);
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    const uint32_t version = kFormatVersion;
    const uint64_t len = text.size();
    out.write(magic.data(), magic.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Blob& b : blobs) {
      out.write(reinterpret_cast<const char*>(b.data.data()), static_cast<std::streamsize>(b.data.size_bytes()));
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct Container {
  json header;
  std::vector<char> payload;

  std::vector<float> blob(const json& entry) const {
    const auto offset = entry.at("offset").get<uint64_t>();
    const auto count = entry.at("count").get<uint64_t>();
    if (offset + count * sizeof(float) > payload.size()) throw IoError("blob out of range: " + entry.dump());
    std::vector<float> out(count);
    std::memcpy(out.data(), payload.data() + offset, count * sizeof(float));
    return out;
  }
};

Container read_container(const std::filesystem::path& path, const std::array<char, 8>* magic, bool header_only) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 8> got{};
  uint32_t version = 0;
  uint64_t len = 0;
  in.read(got.data(), got.size());
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in) throw IoError(path.string() + ": truncated preamble");
  if (got != kDatasetMagic && got != kCheckpointMagic) throw IoError(path.string() + ": bad magic");
  if (magic && got != *magic) throw IoError(path.string() + ": wrong container kind");
  if (version != kFormatVersion) throw IoError(path.string() + ": unsupported version " + std::to_string(version));
  const auto file_size = std::filesystem::file_size(path);
  if (len > file_size) throw IoError(path.string() + ": header length exceeds file");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string() + ": truncated header");
  Container c;
  try {
    c.header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": corrupt header: " + e.what());
  }
  if (!header_only) {
    c.payload.resize(file_size - 20 - len);
    in.read(c.payload.data(), static_cast<std::streamsize>(c.payload.size()));
    if (!in) throw IoError(path.string() + ": truncated payload");
  }
  return c;
}

json role_json(const Role& r) { return json::array({static_cast<int>(r.kind), r.chain, r.step}); }

Role role_from_json(const json& j) {
  const int kind = j.at(0).get<int>();
  if (kind < 0 || kind > 2) throw IoError("bad role kind");
  return Role{static_cast<RoleKind>(kind), j.at(1).get<int>(), j.at(2).get<int>()};
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const TaskConfig& config,
                  std::span<const EncodedExample> examples) {
  config.validate();
  const int64_t len = config.seq_len();
  std::vector<float> inputs;
  std::vector<float> targets;
  json roles = json::array();
  for (const EncodedExample& ex : examples) {
    if (ex.inputs.shape() != std::vector<int64_t>{len, config.input_dim()} ||
        ex.targets.shape() != std::vector<int64_t>{config.n_chains, config.target_dim()}) {
      throw ConfigError("save_dataset: example does not match task config");
    }
    inputs.insert(inputs.end(), ex.inputs.values().begin(), ex.inputs.values().end());
    targets.insert(targets.end(), ex.targets.values().begin(), ex.targets.values().end());
    json r = json::array();
    for (const Role& role : ex.roles) r.push_back(role_json(role));
    roles.push_back(std::move(r));
  }
  const auto count = static_cast<int64_t>(examples.size());
  json header{{"kind", "dataset"},
              {"task", config},
              {"count", count},
              {"seq_len", len},
              {"input_dim", config.input_dim()},
              {"n_query", config.n_chains},
              {"target_dim", config.target_dim()},
              {"roles", std::move(roles)}};
  write_container(path, kDatasetMagic, std::move(header),
                  {Blob{"inputs", {count, len, config.input_dim()}, inputs},
                   Blob{"targets", {count, config.n_chains, config.target_dim()}, targets}});
}

Dataset load_dataset(const std::filesystem::path& path) {
  const Container c = read_container(path, &kDatasetMagic, false);
  Dataset ds;
  try {
    ds.config = c.header.at("task").get<TaskConfig>();
    ds.config.validate();
    const auto count = c.header.at("count").get<int64_t>();
    const auto& table = c.header.at("tensors");
    const std::vector<float> inputs = c.blob(table.at(0));
    const std::vector<float> targets = c.blob(table.at(1));
    const int64_t in_size = ds.config.seq_len() * ds.config.input_dim();
    const int64_t t_size = ds.config.n_chains * ds.config.target_dim();
    if (static_cast<int64_t>(inputs.size()) != count * in_size ||
        static_cast<int64_t>(targets.size()) != count * t_size) {
      throw IoError("dataset blob sizes disagree with header");
    }
    const auto& roles = c.header.at("roles");
    for (int64_t i = 0; i < count; ++i) {
      EncodedExample ex;
      ex.inputs = Tensor({ds.config.seq_len(), ds.config.input_dim()},
                         std::vector<float>(inputs.begin() + i * in_size, inputs.begin() + (i + 1) * in_size));
      ex.targets = Tensor({ds.config.n_chains, ds.config.target_dim()},
                          std::vector<float>(targets.begin() + i * t_size, targets.begin() + (i + 1) * t_size));
      for (const auto& r : roles.at(static_cast<size_t>(i))) ex.roles.push_back(role_from_json(r));
      ds.examples.push_back(std::move(ex));
    }
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": malformed dataset header: " + e.what());
  }
  return ds;
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
  std::vector<Blob> blobs;
  ckpt.params.visit([&](const std::string& name, const Tensor& t) { blobs.push_back({name, t.shape(), t.span()}); });
  const size_t n_params = blobs.size();
  const bool has_state = !ckpt.optimizer.m.empty();
  if (has_state) {
    if (ckpt.optimizer.m.size() != n_params || ckpt.optimizer.v.size() != n_params) {
      throw ConfigError("save_checkpoint: optimizer state does not match parameters");
    }
    for (size_t i = 0; i < n_params; ++i) {
      const auto& m = ckpt.optimizer.m[i];
      blobs.push_back({"adam.m." + blobs[i].name, m.shape(), m.span()});
    }
    for (size_t i = 0; i < n_params; ++i) {
      const auto& v = ckpt.optimizer.v[i];
      blobs.push_back({"adam.v." + blobs[i].name, v.shape(), v.span()});
    }
  }
  json header{{"kind", "checkpoint"},
              {"model", ckpt.params.config},
              {"task", ckpt.task},
              {"epoch", ckpt.epoch},
              {"step", ckpt.step},
              {"seed", ckpt.seed},
              {"adam_step_count", ckpt.optimizer.step_count},
              {"has_optimizer_state", has_state}};
  write_container(path, kCheckpointMagic, std::move(header), blobs);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  const Container c = read_container(path, &kCheckpointMagic, false);
  ModelCheckpoint ckpt;
  try {
    const auto config = c.header.at("model").get<ModelConfig>();
    config.validate();
    if (expected && !(*expected == config)) {
      throw ConfigError(path.string() + ": config mismatch: stored " + c.header.at("model").dump() + ", expected " +
                        json(*expected).dump());
    }
    ckpt.task = c.header.at("task").get<TaskConfig>();
    ckpt.epoch = c.header.at("epoch").get<int64_t>();
    ckpt.step = c.header.at("step").get<int64_t>();
    ckpt.seed = c.header.at("seed").get<uint64_t>();
    ckpt.optimizer.step_count = c.header.at("adam_step_count").get<int64_t>();

    Rng unused(0);
    ckpt.params = init_model(config, unused);
    const auto& table = c.header.at("tensors");
    size_t i = 0;
    auto fill = [&](const std::string& name, Tensor& t) {
      if (i >= table.size()) throw IoError("missing tensor " + name);
      const json& entry = table[i++];
      if (entry.at("name").get<std::string>() != name) {
        throw IoError("tensor order mismatch at " + name + " (found " + entry.at("name").get<std::string>() + ")");
      }
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      if (shape != t.shape()) {
        throw ConfigError("tensor " + name + " has shape " + shape_string(shape) + ", config implies " +
                          shape_string(t.shape()));
      }
      t = Tensor(shape, c.blob(entry));
    };
    ckpt.params.visit(fill);
    if (c.header.at("has_optimizer_state").get<bool>()) {
      std::vector<Tensor> shapes;
      ckpt.params.visit([&](const std::string&, const Tensor& t) { shapes.push_back(Tensor(t.shape())); });
      for (const char* kind : {"m", "v"}) {
        auto& dst = std::string(kind) == "m" ? ckpt.optimizer.m : ckpt.optimizer.v;
        size_t j = 0;
        ckpt.params.visit([&](const std::string& name, const Tensor&) {
          Tensor t = shapes[j++];
          fill("adam." + std::string(kind) + "." + name, t);
          dst.push_back(std::move(t));
        });
      }
    }
    if (i != table.size()) throw IoError("unexpected extra tensors");
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  return ckpt;
}

json read_container_header(const std::filesystem::path& path) { return read_container(path, nullptr, true).header; }

}  // namespace retlab

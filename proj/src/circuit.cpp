// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "retlab/config_io.hpp"
#include "retlab/train.hpp"

namespace retlab {

using nlohmann::json;

RolePattern RolePattern::parse(const std::string& text) {
  static const std::regex pair_re(R"(^\s*(PairFirst|PairSecond)\(\s*(\*|\d+)\s*(?:([+-])\s*(\d+))?\s*\)\s*$)");
  std::smatch m;
  RolePattern p;
  if (std::regex_match(text, m, pair_re)) {
    p.kind = m[1] == "PairFirst" ? Kind::PairFirst : Kind::PairSecond;
    if (m[2] == "*") {
      p.wildcard = true;
      p.step = m[3].matched ? (m[3] == "-" ? -1 : 1) * std::stoi(m[4]) : 0;
    } else {
      if (m[3].matched) throw ConfigError("role '" + text + "': offsets need a '*' step");
      p.step = std::stoi(m[2]);
    }
    return p;
  }
  static const std::regex word_re(R"(^\s*(Query|PrevToken|Self)(?:\(\s*\*?\s*\))?\s*$)");
  if (std::regex_match(text, m, word_re)) {
    p.kind = m[1] == "Query" ? Kind::Query : m[1] == "PrevToken" ? Kind::PrevToken : Kind::Self;
    return p;
  }
  throw ConfigError("unknown role '" + text + "'");
}

std::string RolePattern::str() const {
  switch (kind) {
    case Kind::Query:
      return "Query";
    case Kind::PrevToken:
      return "PrevToken";
    case Kind::Self:
      return "Self";
    default:
      break;
  }
  std::string s = kind == Kind::PairFirst ? "PairFirst(" : "PairSecond(";
  if (!wildcard) return s + std::to_string(step) + ")";
  s += "*";
  if (step > 0) s += "+" + std::to_string(step);
  if (step < 0) s += std::to_string(step);
  return s + ")";
}

std::string head_mode_string(HeadMode mode) {
  switch (mode) {
    case HeadMode::Keep:
      return "keep";
    case HeadMode::Uniform:
      return "uniform";
    case HeadMode::Identity:
      return "identity";
    case HeadMode::OneHot:
      return "onehot";
  }
  return "?";
}

HeadMode parse_head_mode(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "keep") return HeadMode::Keep;
  if (t == "uniform") return HeadMode::Uniform;
  if (t == "identity") return HeadMode::Identity;
  if (t == "onehot") return HeadMode::OneHot;
  throw ConfigError("unknown head mode '" + text + "'");
}

void to_json(json& j, const CircuitSpec& c) {
  json paths = json::array();
  for (const auto& p : c.paths) {
    paths.push_back({{"id", p.id},
                     {"layer", p.layer},
                     {"head", p.head},
                     {"src", p.src.str()},
                     {"dst", p.dst.str()},
                     {"hop", p.hop}});
  }
  j = json{{"background", head_mode_string(c.background)}, {"paths", std::move(paths)}};
}

void from_json(const json& j, CircuitSpec& c) {
  c = CircuitSpec{};
  if (auto it = j.find("background"); it != j.end()) c.background = parse_head_mode(it->get<std::string>());
  if (c.background != HeadMode::Uniform && c.background != HeadMode::Identity) {
    throw ConfigError("circuit background must be 'uniform' or 'identity'");
  }
  int n = 0;
  for (const auto& e : j.at("paths")) {
    CircuitPath p;
    p.id = e.contains("id") ? e["id"].get<std::string>() : "p" + std::to_string(n);
    p.layer = e.at("layer").get<int>();
    p.head = e.value("head", 0);
    p.src = RolePattern::parse(e.at("src").get<std::string>());
    p.dst = RolePattern::parse(e.at("dst").get<std::string>());
    p.hop = e.value("hop", 1);
    c.paths.push_back(std::move(p));
    ++n;
  }
}

CircuitSpec load_circuit(const std::filesystem::path& path) {
  try {
    return read_json_file(path).get<CircuitSpec>();
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

namespace {

void check_step(const RolePattern& r, const TaskConfig& task) {
  if ((r.kind == RolePattern::Kind::PairFirst || r.kind == RolePattern::Kind::PairSecond) && !r.wildcard &&
      (r.step < 1 || r.step > task.steps)) {
    throw ConfigError("role " + r.str() + " has no step " + std::to_string(r.step) + " for D=" +
                      std::to_string(task.steps));
  }
}

bool matches(const Role& role, const RolePattern& p) {
  switch (p.kind) {
    case RolePattern::Kind::PrevToken:
    case RolePattern::Kind::Self:
      return true;
    case RolePattern::Kind::Query:
      return role.kind == RoleKind::Query;
    case RolePattern::Kind::PairFirst:
      return role.kind == RoleKind::PairFirst && (p.wildcard || role.step == p.step);
    case RolePattern::Kind::PairSecond:
      return role.kind == RoleKind::PairSecond && (p.wildcard || role.step == p.step);
  }
  return false;
}

}  // namespace

std::vector<int64_t> resolve_roles(std::span<const Role> roles, const RolePattern& role, const TaskConfig& task) {
  check_step(role, task);
  std::vector<int64_t> out;
  for (size_t i = 0; i < roles.size(); ++i) {
    if (matches(roles[i], role)) out.push_back(static_cast<int64_t>(i));
  }
  return out;
}

std::vector<std::pair<int64_t, int64_t>> resolve_path(std::span<const Role> roles, const CircuitPath& path,
                                                      const TaskConfig& task) {
  check_step(path.dst, task);
  std::map<std::tuple<int, int, int>, int64_t> where;
  for (size_t i = 0; i < roles.size(); ++i) {
    where[{static_cast<int>(roles[i].kind), roles[i].chain, roles[i].step}] = static_cast<int64_t>(i);
  }
  std::vector<std::pair<int64_t, int64_t>> out;
  for (int64_t s : resolve_roles(roles, path.src, task)) {
    const Role& r = roles[static_cast<size_t>(s)];
    std::optional<int64_t> d;
    switch (path.dst.kind) {
      case RolePattern::Kind::Self:
        d = s;
        break;
      case RolePattern::Kind::PrevToken:
        if (s > 0) d = s - 1;
        break;
      case RolePattern::Kind::Query:
        if (auto it = where.find({static_cast<int>(RoleKind::Query), r.chain, 0}); it != where.end()) d = it->second;
        break;
      case RolePattern::Kind::PairFirst:
      case RolePattern::Kind::PairSecond: {
        const int step = path.dst.wildcard ? r.step + path.dst.step : path.dst.step;
        const auto kind = path.dst.kind == RolePattern::Kind::PairFirst ? RoleKind::PairFirst : RoleKind::PairSecond;
        if (auto it = where.find({static_cast<int>(kind), r.chain, step}); it != where.end()) d = it->second;
        break;
      }
    }
    if (d) out.emplace_back(s, *d);
  }
  return out;
}

void CircuitSpec::validate(const ModelConfig& model, const TaskConfig& task) const {
  const EncodedExample probe = encode_instance(gen_indexed_instance(task, 0, 0), task);
  for (const auto& p : paths) {
    const std::string where = "circuit path '" + p.id + "': ";
    if (p.layer < 0 || p.layer >= model.layers) throw ConfigError(where + "layer out of range");
    if (p.head < 0 || p.head >= model.heads) throw ConfigError(where + "head out of range");
    if (p.src.kind == RolePattern::Kind::PrevToken || p.src.kind == RolePattern::Kind::Self) {
      throw ConfigError(where + "source must be a sequence role");
    }
    if (p.hop < 1) throw ConfigError(where + "hop must be >= 1");
    const auto pairs = resolve_path(probe.roles, p, task);
    if (pairs.empty()) throw ConfigError(where + p.src.str() + " -> " + p.dst.str() + " resolves to no positions");
    if (model.causal) {
      for (auto [s, d] : pairs) {
        if (d > s) throw ConfigError(where + "destination follows source under the causal mask");
      }
    }
  }
}

AblationSpec AblationSpec::keep_all(const ModelConfig& model) {
  AblationSpec spec;
  spec.layers = model.layers;
  spec.heads = model.heads;
  spec.entries.resize(static_cast<size_t>(model.layers * model.heads));
  return spec;
}

AblationSpec circuit_ablation(const CircuitSpec& circuit, const ModelConfig& model, std::optional<size_t> skip) {
  AblationSpec spec = AblationSpec::keep_all(model);
  for (auto& e : spec.entries) e.mode = circuit.background;
  for (size_t i = 0; i < circuit.paths.size(); ++i) {
    if (skip && *skip == i) continue;
    const CircuitPath& p = circuit.paths[i];
    if (p.layer < 0 || p.layer >= model.layers || p.head < 0 || p.head >= model.heads) {
      throw ConfigError("circuit path '" + p.id + "' addresses a missing head");
    }
    HeadAblation& h = spec.at(p.layer, p.head);
    h.mode = HeadMode::OneHot;
    h.paths.push_back(p);
  }
  return spec;
}

std::vector<HeadPatch> build_patches(const AblationSpec& spec, const Batch& batch, const TaskConfig& task,
                                     bool causal) {
  const int64_t len = batch.seq_len;
  const int64_t block = len * len;
  std::vector<HeadPatch> patches;
  for (int l = 0; l < spec.layers; ++l) {
    for (int h = 0; h < spec.heads; ++h) {
      const HeadAblation& entry = spec.at(l, h);
      if (entry.mode == HeadMode::Keep) continue;
      HeadPatch patch;
      patch.layer = l;
      patch.head = h;
      if (entry.mode == HeadMode::Uniform) {
        patch.weights.assign(static_cast<size_t>(block), 0.0f);
        for (int64_t i = 0; i < len; ++i) {
          const int64_t allowed = causal ? i + 1 : len;
          for (int64_t j = 0; j < allowed; ++j) {
            patch.weights[static_cast<size_t>(i * len + j)] = 1.0f / static_cast<float>(allowed);
          }
        }
      } else {
        const int64_t copies = entry.mode == HeadMode::OneHot ? batch.size : 1;
        patch.per_example = entry.mode == HeadMode::OneHot;
        patch.weights.assign(static_cast<size_t>(copies * block), 0.0f);
        for (int64_t b = 0; b < copies; ++b) {
          float* w = patch.weights.data() + b * block;
          for (int64_t i = 0; i < len; ++i) w[i * len + i] = 1.0f;
          if (entry.mode != HeadMode::OneHot) continue;
          std::vector<int64_t> owner(static_cast<size_t>(len), -1);
          for (const CircuitPath& p : entry.paths) {
            for (auto [s, d] : resolve_path(batch.roles[static_cast<size_t>(b)], p, task)) {
              if (causal && d > s) throw ConfigError("path '" + p.id + "' violates the causal mask");
              int64_t& own = owner[static_cast<size_t>(s)];
              if (own >= 0 && own != d) {
                throw ConfigError("paths on layer " + std::to_string(l) + " head " + std::to_string(h) +
                                  " send position " + std::to_string(s) + " to two destinations");
              }
              own = d;
              std::fill(w + s * len, w + (s + 1) * len, 0.0f);
              w[s * len + d] = 1.0f;
            }
          }
        }
      }
      patches.push_back(std::move(patch));
    }
  }
  return patches;
}

ForwardResult ablate_forward(const ModelParams& params, const Batch& batch, const TaskConfig& task,
                             const AblationSpec& spec, bool capture) {
  if (spec.layers != params.config.layers || spec.heads != params.config.heads ||
      spec.entries.size() != static_cast<size_t>(spec.layers * spec.heads)) {
    throw ConfigError("ablation spec does not cover the model");
  }
  const std::vector<HeadPatch> patches = build_patches(spec, batch, task, params.config.causal);
  ForwardOptions options;
  options.capture = capture;
  options.patches = patches;
  return forward_batch(params, batch, options);
}

CircuitReport validate_circuit(const ModelParams& params, const CircuitSpec& circuit, const Batch& val,
                               const TaskConfig& task) {
  circuit.validate(params.config, task);
  CircuitReport report;
  report.unablated_mse = evaluate_mse(params, val);
  auto run = [&](std::optional<size_t> skip) {
    const ForwardResult r = ablate_forward(params, val, task, circuit_ablation(circuit, params.config, skip));
    return mse(r.outputs.span(), val.targets.span());
  };
  report.combined_mse = run(std::nullopt);
  for (size_t i = 0; i < circuit.paths.size(); ++i) {
    report.path_ids.push_back(circuit.paths[i].id);
    report.knockout_mse.push_back(run(i));
  }
  return report;
}

void write_circuit_report_csv(const std::filesystem::path& path, const CircuitReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[64];
  auto row = [&](const std::string& name, double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out << name << ',' << buf << '\n';
  };
  out << "ablation,mse\n";
  row("none", report.unablated_mse);
  row("combined", report.combined_mse);
  for (size_t i = 0; i < report.path_ids.size(); ++i) row("knockout:" + report.path_ids[i], report.knockout_mse[i]);
}

double path_attention(const AttentionCapture& capture, const Batch& batch, const CircuitPath& path,
                      const TaskConfig& task) {
  double sum = 0.0;
  int64_t n = 0;
  for (int64_t b = 0; b < batch.size; ++b) {
    for (auto [s, d] : resolve_path(batch.roles[static_cast<size_t>(b)], path, task)) {
      sum += capture.at(path.layer, b, path.head, s, d);
      ++n;
    }
  }
  if (n == 0) throw ConfigError("path '" + path.id + "' resolves to no positions");
  return sum / static_cast<double>(n);
}

EmergenceResult emergence_trace(const std::filesystem::path& dir, const CircuitSpec& circuit, int64_t n_examples) {
  if (n_examples < 1) throw ConfigError("emergence_trace: n_examples must be >= 1");
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  EmergenceResult result;
  std::vector<std::pair<int64_t, std::filesystem::path>> found;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".ckpt") continue;
    try {
      const json header = read_container_header(entry.path());
      found.emplace_back(header.at("epoch").get<int64_t>(), entry.path());
    } catch (const std::exception& e) {
      result.warnings.push_back("skipping " + entry.path().string() + ": " + e.what());
    }
  }
  std::sort(found.begin(), found.end());

  for (const auto& p : circuit.paths) result.traces.push_back(PathTrace{p.id, p.hop, {}, {}});
  std::optional<TaskConfig> task;
  std::optional<ModelConfig> model;
  Batch batch;
  for (const auto& [epoch, path] : found) {
    if (!result.traces.empty() && !result.traces[0].epochs.empty() &&
        static_cast<double>(epoch) <= result.traces[0].epochs.back()) {
      result.warnings.push_back("skipping " + path.string() + ": duplicate epoch " + std::to_string(epoch));
      continue;
    }
    ModelCheckpoint ckpt;
    try {
      ckpt = load_checkpoint(path, model ? &*model : nullptr);
      if (task && !(ckpt.task == *task)) throw ConfigError("task config differs from earlier checkpoints");
    } catch (const std::exception& e) {
      result.warnings.push_back("skipping " + path.string() + ": " + e.what());
      continue;
    }
    if (!task) {
      task = ckpt.task;
      model = ckpt.params.config;
      circuit.validate(*model, *task);
      batch = stack_examples(gen_examples(*task, streams::kValidation, 0, n_examples));
    }
    ForwardOptions options;
    options.capture = true;
    const ForwardResult r = forward_batch(ckpt.params, batch, options);
    for (size_t i = 0; i < circuit.paths.size(); ++i) {
      result.traces[i].epochs.push_back(static_cast<double>(epoch));
      result.traces[i].values.push_back(path_attention(r.capture, batch, circuit.paths[i], *task));
    }
  }
  return result;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<PathTrace>& traces) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,path_id,attention\n";
  char buf[64];
  for (const auto& t : traces) {
    for (size_t i = 0; i < t.epochs.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g,%s,%.9g\n", t.epochs[i], t.path_id.c_str(), t.values[i]);
      out << buf;
    }
  }
}

std::optional<double> crossing_epoch(std::span<const double> epochs, std::span<const double> values,
                                     double threshold) {
  if (epochs.size() != values.size()) throw ConfigError("crossing_epoch: epochs and values differ in length");
  if (epochs.empty()) throw ConfigError("crossing_epoch: empty trace");
  if (values[0] >= threshold) return epochs[0];
  for (size_t i = 1; i < values.size(); ++i) {
    if (values[i] >= threshold) {
      const double frac = (threshold - values[i - 1]) / (values[i] - values[i - 1]);
      return epochs[i - 1] + frac * (epochs[i] - epochs[i - 1]);
    }
  }
  return std::nullopt;
}

std::optional<double> crossing_epoch(const PathTrace& trace, double threshold) {
  return crossing_epoch(trace.epochs, trace.values, threshold);
}

std::vector<float> average_map(const AttentionCapture& capture, int layer, int head) {
  std::vector<double> acc(static_cast<size_t>(capture.seq * capture.seq), 0.0);
  for (int64_t b = 0; b < capture.batch; ++b) {
    const auto m = capture.map(layer, b, head);
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += m[i];
  }
  std::vector<float> out(acc.size());
  for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(capture.batch));
  return out;
}

std::string heatmap_svg(std::span<const float> map, int64_t rows, int64_t cols, const std::string& title) {
  constexpr int kCell = 10;
  constexpr int kTop = 20;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * kCell << "\" height=\"" << rows * kCell + kTop
    << "\">\n<text x=\"2\" y=\"14\" font-family=\"monospace\" font-size=\"12\">" << title << "</text>\n";
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) {
      const float v = std::clamp(map[static_cast<size_t>(i * cols + j)], 0.0f, 1.0f);
      const int g = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      s << "<rect x=\"" << j * kCell << "\" y=\"" << kTop + i * kCell << "\" width=\"" << kCell << "\" height=\""
        << kCell << "\" fill=\"rgb(" << g << ',' << g << ',' << g << ")\"/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<std::filesystem::path> export_attention_maps(const ModelParams& params, const Batch& batch,
                                                         const std::filesystem::path& out_dir,
                                                         const MapExportOptions& options) {
  ForwardOptions fo;
  fo.capture = true;
  const ForwardResult r = forward_batch(params, batch, fo);
  const AttentionCapture& cap = r.capture;
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  auto write = [&](const std::string& stem, std::span<const float> m) {
    const auto csv = out_dir / (stem + ".csv");
    std::ofstream out(csv);
    if (!out) throw IoError("cannot write " + csv.string());
    char buf[32];
    for (int64_t i = 0; i < cap.seq; ++i) {
      for (int64_t j = 0; j < cap.seq; ++j) {
        std::snprintf(buf, sizeof buf, "%.7g", m[static_cast<size_t>(i * cap.seq + j)]);
        out << (j ? "," : "") << buf;
      }
      out << '\n';
    }
    written.push_back(csv);
    if (options.svg) {
      const auto svg = out_dir / (stem + ".svg");
      std::ofstream(svg) << heatmap_svg(m, cap.seq, cap.seq, stem);
      written.push_back(svg);
    }
  };
  const int64_t n_examples = std::min(options.per_example_limit, cap.batch);
  for (int l = 0; l < cap.layers; ++l) {
    for (int h = 0; h < cap.heads; ++h) {
      const std::string suffix = "L" + std::to_string(l) + "_H" + std::to_string(h);
      write("avg_" + suffix, average_map(cap, l, h));
      for (int64_t b = 0; b < n_examples; ++b) write("ex" + std::to_string(b) + "_" + suffix, cap.map(l, b, h));
    }
  }
  const auto roles_path = out_dir / "roles.csv";
  std::ofstream roles(roles_path);
  roles << "example,position,role\n";
  for (int64_t b = 0; b < n_examples; ++b) {
    const auto& rs = batch.roles[static_cast<size_t>(b)];
    for (size_t i = 0; i < rs.size(); ++i) roles << b << ',' << i << ",\"" << role_string(rs[i]) << "\"\n";
  }
  written.push_back(roles_path);
  return written;
}

}  // namespace retlab

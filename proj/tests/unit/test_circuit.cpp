// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "retlab/circuit.hpp"
#include "retlab/plot.hpp"
#include "retlab/train.hpp"

using namespace retlab;
namespace fs = std::filesystem;

namespace {

TaskConfig task43() {
  TaskConfig t;
  t.n_chains = 4;
  t.steps = 3;
  t.seed = 2;
  return t;
}

ModelParams random_model(const TaskConfig& t, int layers, int heads, uint64_t seed) {
  ModelConfig c;
  c.layers = layers;
  c.heads = heads;
  c.residual_dim = 16;
  c.input_dim = t.input_dim();
  c.output_dim = t.target_dim();
  Rng rng(seed);
  ModelParams p = init_model(c, rng);
  std::mt19937_64 r(seed + 1);
  std::normal_distribution<float> n(0.0f, 0.4f);
  p.visit([&](const std::string&, Tensor& x) {
    for (float& v : x.values()) v = n(r);
  });
  return p;
}

CircuitPath make_path(std::string id, int layer, int head, const char* src, const char* dst, int hop = 1) {
  return CircuitPath{std::move(id), layer, head, RolePattern::parse(src), RolePattern::parse(dst), hop};
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("retlab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("role pattern parsing") {
  CHECK(RolePattern::parse("PairFirst(2)").step == 2);
  CHECK(RolePattern::parse("PairSecond(*)").wildcard);
  CHECK(RolePattern::parse("PairFirst(*-1)").step == -1);
  CHECK(RolePattern::parse(" Query ").kind == RolePattern::Kind::Query);
  for (const char* s : {"PairFirst(2)", "PairSecond(*)", "PairSecond(*+1)", "PairFirst(*-1)", "Query", "PrevToken", "Self"}) {
    CHECK(RolePattern::parse(s).str() == s);
  }
  CHECK_THROWS_AS(RolePattern::parse("Pair(1)"), ConfigError);
  CHECK_THROWS_AS(RolePattern::parse("PairFirst(1+1)"), ConfigError);
}

TEST_CASE("resolve_roles on the N=4, D=3 layout") {
  const TaskConfig t = task43();
  const auto ex = encode_instance(gen_indexed_instance(t, 0, 0), t);
  CHECK(resolve_roles(ex.roles, RolePattern::parse("Query"), t) == std::vector<int64_t>{24, 25, 26, 27});
  CHECK(resolve_roles(ex.roles, RolePattern::parse("PairFirst(1)"), t) == std::vector<int64_t>{0, 2, 4, 6});
  CHECK(resolve_roles(ex.roles, RolePattern::parse("PairSecond(3)"), t) == std::vector<int64_t>{17, 19, 21, 23});
  CHECK(resolve_roles(ex.roles, RolePattern::parse("PrevToken"), t).size() == 28);
  CHECK_THROWS_AS(resolve_roles(ex.roles, RolePattern::parse("PairFirst(4)"), t), ConfigError);

  // Absolute roles partition the sequence.
  std::multiset<int64_t> seen;
  for (int k = 1; k <= 3; ++k) {
    for (const char* kind : {"PairFirst(", "PairSecond("}) {
      for (int64_t p : resolve_roles(ex.roles, RolePattern::parse(kind + std::to_string(k) + ")"), t)) seen.insert(p);
    }
  }
  for (int64_t p : resolve_roles(ex.roles, RolePattern::parse("Query"), t)) seen.insert(p);
  CHECK(seen.size() == 28);
  for (int64_t p = 0; p < 28; ++p) CHECK(seen.count(p) == 1);
}

TEST_CASE("resolve_path follows the source chain") {
  const TaskConfig t = task43();
  for (uint64_t i = 0; i < 10; ++i) {
    const auto ex = encode_instance(gen_indexed_instance(t, 0, i), t);
    const auto q = resolve_path(ex.roles, make_path("q", 0, 0, "Query", "PairFirst(1)"), t);
    REQUIRE(q.size() == 4);
    for (auto [s, d] : q) {
      CHECK(ex.roles[s].chain == ex.roles[d].chain);
      CHECK(ex.roles[d].kind == RoleKind::PairFirst);
      CHECK(ex.roles[d].step == 1);
    }
    const auto prev = resolve_path(ex.roles, make_path("p", 0, 0, "PairSecond(*)", "PairFirst(*)"), t);
    REQUIRE(prev.size() == 12);
    for (auto [s, d] : prev) CHECK(d == s - 1);
    const auto back = resolve_path(ex.roles, make_path("b", 0, 0, "PairFirst(*)", "PairSecond(*-1)"), t);
    CHECK(back.size() == 8);  // step 1 has no predecessor
    for (auto [s, d] : back) {
      CHECK(ex.roles[d].step == ex.roles[s].step - 1);
      CHECK(ex.roles[d].chain == ex.roles[s].chain);
    }
  }
}

TEST_CASE("circuit validation") {
  const TaskConfig t = task43();
  const ModelParams p = random_model(t, 2, 2, 1);
  CircuitSpec c;
  c.paths = {make_path("ok", 1, 1, "Query", "PairSecond(1)")};
  CHECK_NOTHROW(c.validate(p.config, t));
  c.paths = {make_path("layer", 2, 0, "Query", "PairSecond(1)")};
  CHECK_THROWS_AS(c.validate(p.config, t), ConfigError);
  c.paths = {make_path("future", 0, 0, "PairFirst(1)", "Query")};
  CHECK_THROWS_AS(c.validate(p.config, t), ConfigError);
  c.paths = {make_path("src", 0, 0, "PrevToken", "Query")};
  CHECK_THROWS_AS(c.validate(p.config, t), ConfigError);

  c.paths = {make_path("a", 0, 1, "Query", "PairSecond(1)", 1)};
  c.background = HeadMode::Identity;
  const nlohmann::json j = c;
  const CircuitSpec back = j.get<CircuitSpec>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.background == HeadMode::Identity);
}

TEST_CASE("all-keep ablation is the plain forward") {
  const TaskConfig t = task43();
  const ModelParams p = random_model(t, 2, 2, 3);
  const Batch b = stack_examples(gen_examples(t, streams::kValidation, 0, 6));
  const ForwardResult plain = forward_batch(p, b);
  const ForwardResult kept = ablate_forward(p, b, t, AblationSpec::keep_all(p.config));
  CHECK(plain.outputs == kept.outputs);
}

TEST_CASE("uniform and one-hot replacement maps") {
  const TaskConfig t = task43();
  const ModelParams p = random_model(t, 2, 2, 4);
  const Batch b = stack_examples(gen_examples(t, streams::kValidation, 0, 3));

  AblationSpec uni = AblationSpec::keep_all(p.config);
  for (auto& e : uni.entries) e.mode = HeadMode::Uniform;
  const ForwardResult u = ablate_forward(p, b, t, uni, true);
  CHECK(u.outputs.shape() == forward_batch(p, b).outputs.shape());
  CHECK(u.outputs.all_finite());
  CHECK_FALSE(u.outputs == forward_batch(p, b).outputs);
  for (int64_t i = 0; i < 28; ++i) {
    for (int64_t j = 0; j < 28; ++j) {
      CHECK(u.capture.at(1, 2, 1, i, j) == doctest::Approx(j <= i ? 1.0 / (i + 1) : 0.0));
    }
  }

  CircuitSpec c;
  c.paths = {make_path("q", 1, 0, "Query", "PairSecond(3)")};
  c.background = HeadMode::Keep;
  const AblationSpec spec = circuit_ablation(c, p.config);
  CHECK(spec.at(1, 0).mode == HeadMode::OneHot);
  CHECK(spec.at(0, 0).mode == HeadMode::Keep);
  const ForwardResult oh = ablate_forward(p, b, t, spec, true);
  for (int64_t ex = 0; ex < 3; ++ex) {
    const auto pairs = resolve_path(b.roles[ex], c.paths[0], t);
    std::set<int64_t> sources;
    for (auto [s, d] : pairs) {
      sources.insert(s);
      CHECK(oh.capture.at(1, ex, 0, s, d) == 1.0f);
    }
    for (int64_t i = 0; i < 28; ++i) {
      double row = 0.0;
      for (int64_t j = 0; j < 28; ++j) row += oh.capture.at(1, ex, 0, i, j);
      CHECK(row == doctest::Approx(1.0));
      if (!sources.count(i)) CHECK(oh.capture.at(1, ex, 0, i, i) == 1.0f);
    }
  }
}

TEST_CASE("knockouts and conflicts") {
  const TaskConfig t = task43();
  const ModelParams p = random_model(t, 2, 2, 5);
  CircuitSpec c;
  c.paths = {make_path("a", 0, 0, "PairSecond(*)", "PairFirst(*)"), make_path("b", 1, 1, "Query", "PairSecond(1)")};
  const AblationSpec ko = circuit_ablation(c, p.config, 1);
  CHECK(ko.at(1, 1).mode == HeadMode::Uniform);
  CHECK(ko.at(0, 0).mode == HeadMode::OneHot);

  const Batch b = stack_examples(gen_examples(t, streams::kValidation, 0, 8));
  const CircuitReport r = validate_circuit(p, c, b, t);
  CHECK(r.path_ids == std::vector<std::string>{"a", "b"});
  CHECK(r.knockout_mse.size() == 2);
  CHECK(r.unablated_mse == doctest::Approx(evaluate_mse(p, b)));

  const fs::path dir = temp_dir("ablate");
  write_circuit_report_csv(dir / "r.csv", r);
  CHECK(read_csv(dir / "r.csv").rows.size() == 2 + c.paths.size());

  CircuitSpec clash;
  clash.paths = {make_path("x", 0, 0, "Query", "PairSecond(1)"), make_path("y", 0, 0, "Query", "PairSecond(2)")};
  CHECK_THROWS_AS(ablate_forward(p, b, t, circuit_ablation(clash, p.config)), ConfigError);
}

TEST_CASE("crossing_epoch interpolation") {
  const std::vector<double> e{100, 110}, v{0.4, 0.6};
  CHECK(*crossing_epoch(e, v) == doctest::Approx(105.0));
  CHECK_FALSE(crossing_epoch(std::vector<double>{0, 10, 20}, std::vector<double>{0.1, 0.2, 0.49}).has_value());
  CHECK(*crossing_epoch(std::vector<double>{30, 40}, std::vector<double>{0.7, 0.9}) == 30.0);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> ep, val;
    for (int i = 0; i < 12; ++i) {
      ep.push_back(10.0 * i);
      val.push_back(u(rng));
    }
    std::optional<double> prev;
    for (double thr = 0.05; thr < 1.0; thr += 0.05) {
      const auto c = crossing_epoch(ep, val, thr);
      if (prev && c) CHECK(*c >= *prev);
      if (c) prev = c;
      if (!c) prev.reset();
      if (!c) break;
    }
  }
}

TEST_CASE("attention maps and emergence traces") {
  const fs::path dir = temp_dir("emerge");
  RunConfig r;
  r.task.n_chains = 2;
  r.task.steps = 1;
  r.model.layers = 2;
  r.model.heads = 1;
  r.model.residual_dim = 16;
  r.steps = 6;
  r.batch_size = 4;
  r.train_examples = 8;
  r.val_examples = 8;
  r.seed = 3;
  r.checkpoint_every = 1;
  r.checkpoint_dir = dir / "ckpt";
  const RunResult res = train(r);
  REQUIRE(res.metrics.checkpoints.size() == 4);

  CircuitSpec c;
  c.paths = {make_path("prev", 0, 0, "PairSecond(*)", "PairFirst(*)", 1),
             make_path("ind", 1, 0, "Query", "PairSecond(1)", 2)};
  {
    std::ofstream(dir / "ckpt" / "epoch_999999.ckpt") << "truncated";
  }
  const EmergenceResult em = emergence_trace(dir / "ckpt", c, 8);
  CHECK(em.warnings.size() == 1);
  REQUIRE(em.traces.size() == 2);
  CHECK(em.traces[0].epochs == std::vector<double>{0, 1, 2, 3});
  for (const auto& tr : em.traces) {
    for (double v : tr.values) CHECK((v >= 0.0 && v <= 1.0));
  }

  const fs::path single = dir / "single";
  fs::create_directories(single);
  fs::copy_file(res.metrics.checkpoints.back(), single / "epoch_000003.ckpt");
  CHECK(emergence_trace(single, c, 8).traces[0].values.size() == 1);

  const ModelCheckpoint ck = load_checkpoint(res.metrics.checkpoints.back());
  const Batch b = stack_examples(gen_examples(ck.task, streams::kValidation, 0, 32));
  const ForwardResult f = forward_batch(ck.params, b, ForwardOptions{.capture = true});
  const auto avg = average_map(f.capture, 1, 0);
  for (int64_t i = 0; i < b.seq_len; ++i) {
    for (int64_t j = 0; j < b.seq_len; ++j) {
      double s = 0.0;
      for (int64_t e = 0; e < 32; ++e) s += f.capture.at(1, e, 0, i, j);
      CHECK(avg[static_cast<size_t>(i * b.seq_len + j)] == doctest::Approx(s / 32).epsilon(1e-6));
    }
  }

  const auto files = export_attention_maps(ck.params, b, dir / "maps", MapExportOptions{2, true});
  CHECK(fs::exists(dir / "maps" / "avg_L0_H0.csv"));
  CHECK(fs::exists(dir / "maps" / "avg_L1_H0.svg"));
  CHECK(fs::exists(dir / "maps" / "ex1_L1_H0.csv"));
  CHECK_FALSE(fs::exists(dir / "maps" / "ex2_L1_H0.csv"));
  CHECK(read_csv(dir / "maps" / "roles.csv").rows.size() == static_cast<size_t>(2 * b.seq_len));
  CHECK(files.size() > 4);
}

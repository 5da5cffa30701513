// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "retlab/io.hpp"
#include "retlab/model.hpp"

using namespace retlab;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 1;
  c.heads = 1;
  c.residual_dim = 8;
  c.head_dim = 4;
  c.use_mlp = false;
  c.input_dim = 8;
  c.output_dim = 4;
  return c;
}

void randomize(ModelParams& p, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 0.5f);
  p.visit([&](const std::string&, Tensor& t) {
    for (float& v : t.values()) v = n(rng);
  });
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("retlab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("parameter count matches a hand count") {
  Rng rng(1);
  // w_in 8x8+8, ln1 2x8, q/k/v 3x(8x4+4), o 4x8+8, lnf 2x8, out 8x4+4
  CHECK(init_model(tiny_config(), rng).parameter_count() == 72 + 16 + 108 + 40 + 16 + 36);
}

TEST_CASE("init is seeded and finite") {
  ModelConfig c = tiny_config();
  c.layers = 2;
  c.use_mlp = true;
  Rng a(4), b(4);
  const ModelParams p = init_model(c, a);
  const ModelParams q = init_model(c, b);
  std::vector<Tensor> tp, tq;
  p.visit([&](const std::string&, const Tensor& t) { tp.push_back(t); });
  q.visit([&](const std::string&, const Tensor& t) { tq.push_back(t); });
  CHECK(tp == tq);
  for (const auto& t : tp) CHECK(t.all_finite());
}

TEST_CASE("zeroed value projections reduce the model to its bypass path") {
  ModelParams p;
  {
    Rng rng(2);
    p = init_model(tiny_config(), rng);
  }
  randomize(p, 3);
  p.layers[0].wv.fill(0.0f);
  p.layers[0].bv.fill(0.0f);

  Tensor x({3, 8});
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n;
  for (float& v : x.values()) v = n(rng);
  const ForwardResult r = forward(p, x, 2);
  REQUIRE(r.outputs.shape() == std::vector<int64_t>{2, 4});

  // Hand-rolled oracle: h = x W_in + b_in + b_o, y = LN(h) W_out + b_out.
  for (int64_t row = 1; row < 3; ++row) {
    double h[8];
    for (int c = 0; c < 8; ++c) {
      double s = p.b_in[c] + p.layers[0].bo[c];
      for (int k = 0; k < 8; ++k) s += double(x.at(row, k)) * p.w_in.at(k, c);
      h[c] = s;
    }
    double mean = 0.0, var = 0.0;
    for (double v : h) mean += v / 8;
    for (double v : h) var += (v - mean) * (v - mean) / 8;
    double ln[8];
    for (int c = 0; c < 8; ++c) ln[c] = (h[c] - mean) / std::sqrt(var + 1e-5) * p.lnf_gain[c] + p.lnf_bias[c];
    for (int o = 0; o < 4; ++o) {
      double y = p.b_out[o];
      for (int c = 0; c < 8; ++c) y += ln[c] * p.w_out.at(c, o);
      CHECK(r.outputs.at(row - 1, o) == doctest::Approx(y).epsilon(1e-5));
    }
  }
}

TEST_CASE("causal attention rows are distributions with no future mass") {
  ModelConfig c = tiny_config();
  c.layers = 2;
  c.heads = 2;
  c.use_mlp = true;
  TaskConfig t;
  t.n_chains = 2;
  t.steps = 2;
  t.ic = false;
  c.output_dim = t.target_dim();
  Rng rng(5);
  ModelParams p = init_model(c, rng);
  randomize(p, 6);
  const auto ex = gen_examples(t, streams::kValidation, 0, 3);
  const ForwardResult r = forward_batch(p, stack_examples(ex), ForwardOptions{.capture = true});
  CHECK(r.outputs.shape() == std::vector<int64_t>{6, 4});
  const auto& cap = r.capture;
  for (int l = 0; l < 2; ++l) {
    for (int64_t b = 0; b < 3; ++b) {
      for (int h = 0; h < 2; ++h) {
        for (int64_t i = 0; i < cap.seq; ++i) {
          double s = 0.0;
          for (int64_t j = 0; j < cap.seq; ++j) {
            if (j > i) CHECK(cap.at(l, b, h, i, j) == 0.0f);
            s += cap.at(l, b, h, i, j);
          }
          CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
        }
      }
    }
  }
}

TEST_CASE("non-IC output shape for D=3, N=4") {
  TaskConfig t;
  t.n_chains = 4;
  t.steps = 3;
  t.ic = false;
  ModelConfig c;
  c.input_dim = t.input_dim();
  c.output_dim = t.target_dim();
  Rng rng(6);
  const auto ex = gen_examples(t, streams::kValidation, 0, 1);
  CHECK(forward(init_model(c, rng), ex[0].inputs, 4).outputs.shape() == std::vector<int64_t>{4, 4});
}

TEST_CASE("full-model gradient check") {
  TaskConfig t;
  t.n_chains = 2;
  t.steps = 1;
  t.seed = 3;
  REQUIRE(t.seq_len() == 6);
  ModelConfig c;
  c.layers = 2;
  c.heads = 1;
  c.residual_dim = 8;
  c.use_mlp = true;
  c.input_dim = t.input_dim();
  c.output_dim = t.target_dim();
  Rng rng(7);
  ModelParams p = init_model(c, rng);
  randomize(p, 8);
  const Batch b = stack_examples(gen_examples(t, streams::kTrain, 0, 2));
  const auto r = grad_check_model(p.cast<double>(), b.inputs.cast<double>(), b.targets.cast<double>(), b.size,
                                  b.seq_len, b.n_query);
  CHECK(r.max_rel_error < 1e-4);
  CHECK(r.analytic.size() == static_cast<size_t>(p.parameter_count()));
}

TEST_CASE("chain interleaving does not change the loss distribution") {
  TaskConfig t;
  t.n_chains = 3;
  t.steps = 2;
  ModelConfig c;
  c.residual_dim = 16;
  c.input_dim = t.input_dim();
  c.output_dim = t.target_dim();
  Rng rng(9);
  ModelParams p = init_model(c, rng);
  randomize(p, 10);
  double a = 0.0, b = 0.0;
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    ChainInstance inst = gen_indexed_instance(t, streams::kTrain, static_cast<uint64_t>(i));
    auto ex = encode_instance(inst, t);
    a += mse(forward(p, ex.inputs, t.n_chains).outputs.span(), ex.targets.span());
    for (auto& block : inst.pair_order) std::reverse(block.begin(), block.end());
    ex = encode_instance(inst, t);
    b += mse(forward(p, ex.inputs, t.n_chains).outputs.span(), ex.targets.span());
  }
  CHECK(std::abs(a - b) / a < 0.05);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = temp_dir("ckpt");
  ModelConfig c = tiny_config();
  c.use_mlp = true;
  Rng rng(11);
  ModelCheckpoint ck;
  ck.params = init_model(c, rng);
  ck.task.n_chains = 1;
  ck.task.steps = 1;
  ck.epoch = 7;
  ck.step = 123;
  ck.seed = 99;
  ck.optimizer.step_count = 123;
  ck.params.visit([&](const std::string&, const Tensor& t) {
    ck.optimizer.m.push_back(Tensor::full(t.shape(), 0.25f));
    ck.optimizer.v.push_back(Tensor::full(t.shape(), 0.5f));
  });
  save_checkpoint(dir / "a.ckpt", ck);
  const ModelCheckpoint back = load_checkpoint(dir / "a.ckpt", &c);
  CHECK(back.epoch == 7);
  CHECK(back.step == 123);
  CHECK(back.seed == 99);
  CHECK(back.task == ck.task);
  CHECK(back.optimizer.step_count == 123);
  CHECK(back.optimizer.m == ck.optimizer.m);
  CHECK(back.optimizer.v == ck.optimizer.v);

  const auto ex = gen_examples(ck.task, streams::kValidation, 0, 1);
  CHECK(forward(ck.params, ex[0].inputs, 1).outputs == forward(back.params, ex[0].inputs, 1).outputs);

  // Payload is three float32 copies of the parameters plus a small header.
  const auto payload = 3 * 4 * static_cast<uintmax_t>(ck.params.parameter_count());
  CHECK(fs::file_size(dir / "a.ckpt") > payload);
  CHECK(fs::file_size(dir / "a.ckpt") < payload + 16384);

  ModelConfig wrong = c;
  wrong.input_dim = 10;
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", &wrong), ConfigError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const fs::path dir = temp_dir("corrupt");
  Rng rng(12);
  ModelCheckpoint ck;
  ck.params = init_model(tiny_config(), rng);
  save_checkpoint(dir / "a.ckpt", ck);
  fs::resize_file(dir / "a.ckpt", fs::file_size(dir / "a.ckpt") - 10);
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt"), IoError);
  {
    std::ofstream(dir / "b.ckpt") << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "b.ckpt"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("dataset round trip") {
  const fs::path dir = temp_dir("dataset");
  TaskConfig t;
  t.n_chains = 3;
  t.steps = 2;
  t.seed = 4;
  const auto ex = gen_examples(t, streams::kGen, 0, 5);
  save_dataset(dir / "d.rds", t, ex);
  const Dataset back = load_dataset(dir / "d.rds");
  CHECK(back.config == t);
  REQUIRE(back.examples.size() == 5);
  for (size_t i = 0; i < 5; ++i) {
    CHECK(back.examples[i].inputs == ex[i].inputs);
    CHECK(back.examples[i].targets == ex[i].targets);
    CHECK(back.examples[i].roles == ex[i].roles);
  }
  CHECK(read_container_header(dir / "d.rds").at("count") == 5);
}

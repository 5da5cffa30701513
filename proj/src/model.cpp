// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/model.hpp"

#include <algorithm>
#include <cmath>

namespace retlab {

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("model: layers must be >= 1");
  if (heads < 1) throw ConfigError("model: heads must be >= 1");
  if (residual_dim < 1) throw ConfigError("model: residual_dim must be >= 1");
  if (effective_head_dim() < 1) throw ConfigError("model: head_dim must be >= 1");
  if (head_dim == 0 && residual_dim % heads != 0) {
    throw ConfigError("model: residual_dim must be divisible by heads when head_dim is implicit");
  }
  if (input_dim < 1 || output_dim < 1) throw ConfigError("model: input/output dims must be >= 1");
  if (use_mlp && effective_mlp_hidden() < 1) throw ConfigError("model: mlp_hidden must be >= 1");
}

void ModelConfig::check_task(const TaskConfig& task) const {
  if (input_dim != task.input_dim()) {
    throw ConfigError("model input_dim " + std::to_string(input_dim) + " does not match task input width " +
                      std::to_string(task.input_dim()));
  }
  if (output_dim != task.target_dim()) {
    throw ConfigError("model output_dim " + std::to_string(output_dim) + " does not match task target width " +
                      std::to_string(task.target_dim()));
  }
}

ModelParams init_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  std::normal_distribution<float> normal(0.0f, 0.02f);
  auto weight = [&](int64_t rows, int64_t cols) {
    Tensor t({rows, cols});
    for (float& v : t.values()) v = normal(rng);
    return t;
  };
  auto zeros = [](int64_t n) { return Tensor({n}); };
  auto ones = [](int64_t n) { return Tensor::full({n}, 1.0f); };

  const int64_t d = config.residual_dim;
  const int64_t hw = static_cast<int64_t>(config.heads) * config.effective_head_dim();
  ModelParams p;
  p.config = config;
  p.w_in = weight(config.input_dim, d);
  p.b_in = zeros(d);
  for (int l = 0; l < config.layers; ++l) {
    BasicLayerParams<float> lp;
    lp.ln1_gain = ones(d);
    lp.ln1_bias = zeros(d);
    lp.wq = weight(d, hw);
    lp.bq = zeros(hw);
    lp.wk = weight(d, hw);
    lp.bk = zeros(hw);
    lp.wv = weight(d, hw);
    lp.bv = zeros(hw);
    lp.wo = weight(hw, d);
    lp.bo = zeros(d);
    if (config.use_mlp) {
      const int64_t hidden = config.effective_mlp_hidden();
      lp.ln2_gain = ones(d);
      lp.ln2_bias = zeros(d);
      lp.w1 = weight(d, hidden);
      lp.b1 = zeros(hidden);
      lp.w2 = weight(hidden, d);
      lp.b2 = zeros(d);
    }
    p.layers.push_back(std::move(lp));
  }
  p.lnf_gain = ones(d);
  p.lnf_bias = zeros(d);
  p.w_out = weight(d, config.output_dim);
  p.b_out = zeros(config.output_dim);
  return p;
}

std::vector<uint8_t> attention_mask(int64_t blocks, int64_t seq_len, bool causal) {
  std::vector<uint8_t> mask(static_cast<size_t>(blocks * seq_len * seq_len), 1);
  if (!causal) return mask;
  for (int64_t b = 0; b < blocks; ++b) {
    uint8_t* block = mask.data() + b * seq_len * seq_len;
    for (int64_t i = 0; i < seq_len; ++i) {
      for (int64_t j = i + 1; j < seq_len; ++j) block[i * seq_len + j] = 0;
    }
  }
  return mask;
}

template <typename T>
ForwardGraph build_forward(BasicGraph<T>& g, const BasicModelParams<T>& params, const BasicTensor<T>& inputs,
                           int64_t batch, int64_t seq_len, int64_t n_query, const ForwardOptions& options,
                           bool track_params) {
  const ModelConfig& cfg = params.config;
  cfg.validate();
  if (inputs.rank() != 2 || inputs.dim(0) != batch * seq_len || inputs.dim(1) != cfg.input_dim) {
    throw ConfigError("forward: inputs " + shape_string(inputs.shape()) + " do not match batch " +
                      std::to_string(batch) + " x seq " + std::to_string(seq_len) + " x input_dim " +
                      std::to_string(cfg.input_dim));
  }
  if (n_query < 1 || n_query > seq_len) throw ConfigError("forward: n_query out of range");
  if (!inputs.all_finite()) throw NumericError("forward: non-finite inputs");
  for (const HeadPatch& patch : options.patches) {
    if (patch.layer < 0 || patch.layer >= cfg.layers || patch.head < 0 || patch.head >= cfg.heads) {
      throw ConfigError("forward: attention patch addresses a missing head");
    }
    const size_t expected = static_cast<size_t>((patch.per_example ? batch : 1) * seq_len * seq_len);
    if (patch.weights.size() != expected) throw ConfigError("forward: attention patch has wrong size");
  }

  ForwardGraph fg;
  auto leaf = [&](const BasicTensor<T>& t) { return track_params ? g.parameter(t) : g.constant(t); };

  struct LayerVars {
    Var ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2;
  };
  Var w_in = leaf(params.w_in);
  Var b_in = leaf(params.b_in);
  fg.params = {w_in, b_in};
  std::vector<LayerVars> lv;
  for (const auto& lp : params.layers) {
    LayerVars v;
    v.ln1_gain = leaf(lp.ln1_gain);
    v.ln1_bias = leaf(lp.ln1_bias);
    v.wq = leaf(lp.wq);
    v.bq = leaf(lp.bq);
    v.wk = leaf(lp.wk);
    v.bk = leaf(lp.bk);
    v.wv = leaf(lp.wv);
    v.bv = leaf(lp.bv);
    v.wo = leaf(lp.wo);
    v.bo = leaf(lp.bo);
    fg.params.insert(fg.params.end(), {v.ln1_gain, v.ln1_bias, v.wq, v.bq, v.wk, v.bk, v.wv, v.bv, v.wo, v.bo});
    if (cfg.use_mlp) {
      v.ln2_gain = leaf(lp.ln2_gain);
      v.ln2_bias = leaf(lp.ln2_bias);
      v.w1 = leaf(lp.w1);
      v.b1 = leaf(lp.b1);
      v.w2 = leaf(lp.w2);
      v.b2 = leaf(lp.b2);
      fg.params.insert(fg.params.end(), {v.ln2_gain, v.ln2_bias, v.w1, v.b1, v.w2, v.b2});
    }
    lv.push_back(v);
  }
  Var lnf_gain = leaf(params.lnf_gain);
  Var lnf_bias = leaf(params.lnf_bias);
  Var w_out = leaf(params.w_out);
  Var b_out = leaf(params.b_out);
  fg.params.insert(fg.params.end(), {lnf_gain, lnf_bias, w_out, b_out});

  const AttnShape shape{batch, seq_len, cfg.heads, cfg.effective_head_dim()};
  const std::vector<uint8_t> mask = attention_mask(batch * cfg.heads, seq_len, cfg.causal);

  Var x = ops::linear(g, g.constant(inputs), w_in, b_in);
  for (int l = 0; l < cfg.layers; ++l) {
    const LayerVars& v = lv[static_cast<size_t>(l)];
    try {
      Var h = ops::layer_norm(g, x, v.ln1_gain, v.ln1_bias);
      Var q = ops::linear(g, h, v.wq, v.bq);
      Var k = ops::linear(g, h, v.wk, v.bk);
      Var val = ops::linear(g, h, v.wv, v.bv);
      Var att = ops::softmax_rows(g, ops::attention_scores(g, q, k, shape), mask);
      bool patched = false;
      BasicTensor<T> replaced;
      for (const HeadPatch& patch : options.patches) {
        if (patch.layer != l) continue;
        if (!patched) {
          replaced = g.value(att);
          patched = true;
        }
        const int64_t block = seq_len * seq_len;
        for (int64_t b = 0; b < batch; ++b) {
          const float* src = patch.weights.data() + (patch.per_example ? b * block : 0);
          T* dst = replaced.data() + (b * cfg.heads + patch.head) * block;
          for (int64_t i = 0; i < block; ++i) dst[i] = static_cast<T>(src[i]);
        }
      }
      if (patched) att = ops::override_value(g, att, std::move(replaced));
      fg.attention.push_back(att);
      Var mixed = ops::attention_mix(g, att, val, shape);
      x = ops::add(g, x, ops::linear(g, mixed, v.wo, v.bo));
      if (cfg.use_mlp) {
        Var h2 = ops::layer_norm(g, x, v.ln2_gain, v.ln2_bias);
        Var hidden = ops::gelu(g, ops::linear(g, h2, v.w1, v.b1));
        x = ops::add(g, x, ops::linear(g, hidden, v.w2, v.b2));
      }
    } catch (const NumericError& e) {
      throw NumericError("layer " + std::to_string(l) + ": " + e.what());
    }
  }
  Var xf = ops::layer_norm(g, x, lnf_gain, lnf_bias);
  std::vector<int64_t> rows;
  rows.reserve(static_cast<size_t>(batch * n_query));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t i = seq_len - n_query; i < seq_len; ++i) rows.push_back(b * seq_len + i);
  }
  fg.output = ops::linear(g, ops::gather_rows(g, xf, std::move(rows)), w_out, b_out);
  return fg;
}

template ForwardGraph build_forward<float>(Graph&, const ModelParams&, const Tensor&, int64_t, int64_t, int64_t,
                                           const ForwardOptions&, bool);
template ForwardGraph build_forward<double>(Graph64&, const ModelParams64&, const Tensor64&, int64_t, int64_t,
                                            int64_t, const ForwardOptions&, bool);

namespace {

ForwardResult run(const ModelParams& params, const Tensor& inputs, int64_t batch, int64_t seq_len, int64_t n_query,
                  const ForwardOptions& options) {
  Graph g;
  ForwardGraph fg = build_forward(g, params, inputs, batch, seq_len, n_query, options, false);
  ForwardResult result;
  result.outputs = g.value(fg.output);
  if (options.capture) {
    AttentionCapture& cap = result.capture;
    cap.layers = params.config.layers;
    cap.heads = params.config.heads;
    cap.batch = batch;
    cap.seq = seq_len;
    cap.weights.reserve(static_cast<size_t>(cap.layers * batch * cap.heads * seq_len * seq_len));
    for (Var att : fg.attention) {
      const auto& w = g.value(att).values();
      cap.weights.insert(cap.weights.end(), w.begin(), w.end());
    }
  }
  return result;
}

}  // namespace

GradCheckResult grad_check_model(const ModelParams64& params, const Tensor64& inputs, const Tensor64& targets,
                                 int64_t batch, int64_t seq_len, int64_t n_query, double h, double eps) {
  auto loss_of = [&](const ModelParams64& p, bool track, std::vector<Var>* leaves, Graph64& g) {
    ForwardGraph fg = build_forward(g, p, inputs, batch, seq_len, n_query, ForwardOptions{}, track);
    if (leaves) *leaves = fg.params;
    return ops::mse_loss(g, fg.output, g.constant(targets));
  };

  GradCheckResult result;
  std::vector<double> analytic;
  {
    Graph64 g;
    std::vector<Var> leaves;
    Var loss = loss_of(params, true, &leaves, g);
    g.backward(loss);
    for (Var v : leaves) {
      const Tensor64 gr = g.grad(v);
      analytic.insert(analytic.end(), gr.values().begin(), gr.values().end());
    }
  }
  result.analytic = Tensor64({static_cast<int64_t>(analytic.size())}, analytic);
  result.numeric = Tensor64({static_cast<int64_t>(analytic.size())});

  ModelParams64 probe = params;
  std::vector<double*> entries;
  probe.visit([&entries](const std::string&, Tensor64& t) {
    for (auto& v : t.values()) entries.push_back(&v);
  });
  auto eval = [&]() {
    Graph64 g;
    return g.value(loss_of(probe, false, nullptr, g))[0];
  };
  for (size_t i = 0; i < entries.size(); ++i) {
    const double x = *entries[i];
    *entries[i] = x + h;
    const double up = eval();
    *entries[i] = x - h;
    const double down = eval();
    *entries[i] = x;
    const double n = (up - down) / (2.0 * h);
    result.numeric[i] = n;
    const double a = analytic[i];
    const double rel = std::abs(a - n) / (std::abs(a) + std::abs(n) + eps);
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = static_cast<int64_t>(i);
    }
  }
  return result;
}

ForwardResult forward_batch(const ModelParams& params, const Batch& batch, const ForwardOptions& options) {
  return run(params, batch.inputs, batch.size, batch.seq_len, batch.n_query, options);
}

ForwardResult forward(const ModelParams& params, const Tensor& inputs, int64_t n_query, bool capture) {
  ForwardOptions options;
  options.capture = capture;
  return run(params, inputs, 1, inputs.dim(0), n_query, options);
}

}  // namespace retlab

// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm residual transformer over continuous input vectors. Inputs are
// projected into the residual stream; each layer applies multi-head attention
// and an optional GELU MLP; outputs are read from the last `n_query`
// positions through a linear readout after a final layer norm.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "retlab/autograd.hpp"
#include "retlab/optim.hpp"
#include "retlab/rng.hpp"
#include "retlab/task.hpp"
#include "retlab/tensor.hpp"

namespace retlab {

struct ModelConfig {
  int layers = 2;
  int heads = 1;
  int residual_dim = 64;
  /// 0 selects residual_dim / heads.
  int head_dim = 0;
  bool use_mlp = true;
  /// 0 selects 4 * residual_dim.
  int mlp_hidden = 0;
  int input_dim = 8;
  int output_dim = 4;
  bool causal = true;

  void validate() const;
  int effective_head_dim() const { return head_dim > 0 ? head_dim : residual_dim / heads; }
  int effective_mlp_hidden() const { return mlp_hidden > 0 ? mlp_hidden : 4 * residual_dim; }
  /// Throws ConfigError unless input/output widths match the task.
  void check_task(const TaskConfig& task) const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct BasicLayerParams {
  BasicTensor<T> ln1_gain, ln1_bias;
  BasicTensor<T> wq, bq, wk, bk, wv, bv;  // [residual, heads*head_dim]
  BasicTensor<T> wo, bo;                  // [heads*head_dim, residual]
  BasicTensor<T> ln2_gain, ln2_bias;      // empty without MLP
  BasicTensor<T> w1, b1, w2, b2;          // empty without MLP
};

template <typename T>
struct BasicModelParams {
  ModelConfig config;
  BasicTensor<T> w_in, b_in;
  std::vector<BasicLayerParams<T>> layers;
  BasicTensor<T> lnf_gain, lnf_bias;
  BasicTensor<T> w_out, b_out;

  /// Calls f(name, tensor) for every parameter in a fixed order.
  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;

  int64_t parameter_count() const;

  template <typename U>
  BasicModelParams<U> cast() const;
};

using ModelParams = BasicModelParams<float>;
using ModelParams64 = BasicModelParams<double>;

/// Weights ~ N(0, 0.02^2), biases 0, layer-norm gains 1.
ModelParams init_model(const ModelConfig& config, Rng& rng);

/// Replacement post-softmax weights for one head. `weights` holds one L x L
/// block shared by the batch, or one block per example when `per_example`.
struct HeadPatch {
  int layer = 0;
  int head = 0;
  bool per_example = false;
  std::vector<float> weights;
};

struct ForwardOptions {
  bool capture = false;
  std::span<const HeadPatch> patches;
};

/// Post-softmax attention weights laid out [layer][example][head][i][j].
struct AttentionCapture {
  int layers = 0;
  int heads = 0;
  int64_t batch = 0;
  int64_t seq = 0;
  std::vector<float> weights;

  float at(int layer, int64_t example, int head, int64_t i, int64_t j) const {
    return weights[static_cast<size_t>((((static_cast<int64_t>(layer) * batch + example) * heads + head) * seq + i) * seq + j)];
  }
  /// One L x L map.
  std::span<const float> map(int layer, int64_t example, int head) const {
    return std::span<const float>(weights).subspan(
        static_cast<size_t>(((static_cast<int64_t>(layer) * batch + example) * heads + head) * seq * seq),
        static_cast<size_t>(seq * seq));
  }
};

/// Nodes of a forward pass recorded on a graph.
struct ForwardGraph {
  Var output;                  // [batch*n_query, output_dim]
  std::vector<Var> attention;  // per layer, [batch*heads*seq, seq]
  std::vector<Var> params;     // visit order
};

/// Records the forward pass on `g`. Parameters become gradient-tracked leaves
/// when `track_params` is set.
template <typename T>
ForwardGraph build_forward(BasicGraph<T>& g, const BasicModelParams<T>& params, const BasicTensor<T>& inputs,
                           int64_t batch, int64_t seq_len, int64_t n_query, const ForwardOptions& options,
                           bool track_params);

struct ForwardResult {
  Tensor outputs;  // [batch*n_query, output_dim]
  AttentionCapture capture;
};

/// Evaluates a stacked batch.
ForwardResult forward_batch(const ModelParams& params, const Batch& batch, const ForwardOptions& options = {});

/// Evaluates one example: inputs [L, input_dim] -> outputs [n_query, output_dim].
ForwardResult forward(const ModelParams& params, const Tensor& inputs, int64_t n_query, bool capture = false);

/// Central-difference check of d(MSE)/d(params) for every parameter entry,
/// flattened in visit order.
GradCheckResult grad_check_model(const ModelParams64& params, const Tensor64& inputs, const Tensor64& targets,
                                 int64_t batch, int64_t seq_len, int64_t n_query, double h = 1e-5,
                                 double eps = 1e-6);

/// Causal (or full) attention mask for `rows` stacked L x L blocks.
std::vector<uint8_t> attention_mask(int64_t blocks, int64_t seq_len, bool causal);

// ---------------------------------------------------------------------------

template <typename T>
template <typename F>
void BasicModelParams<T>::visit(F&& f) {
  f(std::string("w_in"), w_in);
  f(std::string("b_in"), b_in);
  for (size_t l = 0; l < layers.size(); ++l) {
    auto& p = layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    f(pre + "ln1_gain", p.ln1_gain);
    f(pre + "ln1_bias", p.ln1_bias);
    f(pre + "wq", p.wq);
    f(pre + "bq", p.bq);
    f(pre + "wk", p.wk);
    f(pre + "bk", p.bk);
    f(pre + "wv", p.wv);
    f(pre + "bv", p.bv);
    f(pre + "wo", p.wo);
    f(pre + "bo", p.bo);
    if (config.use_mlp) {
      f(pre + "ln2_gain", p.ln2_gain);
      f(pre + "ln2_bias", p.ln2_bias);
      f(pre + "w1", p.w1);
      f(pre + "b1", p.b1);
      f(pre + "w2", p.w2);
      f(pre + "b2", p.b2);
    }
  }
  f(std::string("lnf_gain"), lnf_gain);
  f(std::string("lnf_bias"), lnf_bias);
  f(std::string("w_out"), w_out);
  f(std::string("b_out"), b_out);
}

template <typename T>
template <typename F>
void BasicModelParams<T>::visit(F&& f) const {
  const_cast<BasicModelParams<T>*>(this)->visit(
      [&f](const std::string& name, BasicTensor<T>& t) { f(name, static_cast<const BasicTensor<T>&>(t)); });
}

template <typename T>
int64_t BasicModelParams<T>::parameter_count() const {
  int64_t n = 0;
  visit([&n](const std::string&, const BasicTensor<T>& t) { n += static_cast<int64_t>(t.size()); });
  return n;
}

template <typename T>
template <typename U>
BasicModelParams<U> BasicModelParams<T>::cast() const {
  BasicModelParams<U> out;
  out.config = config;
  out.layers.resize(layers.size());
  std::vector<const BasicTensor<T>*> src;
  visit([&src](const std::string&, const BasicTensor<T>& t) { src.push_back(&t); });
  size_t i = 0;
  out.visit([&](const std::string&, BasicTensor<U>& t) { t = src[i++]->template cast<U>(); });
  return out;
}

}  // namespace retlab

// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over BasicTensor.
//
// Nodes are appended in creation order, which is a topological order of the
// computation, so backward() walks the tape once from the loss down to the
// first node. A Graph lives for one forward/backward pass.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "retlab/tensor.hpp"

namespace retlab {

/// Handle to a node of a BasicGraph.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class BasicGraph {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(BasicGraph&, Var self)>;

  Var constant(TensorT value);
  Var parameter(TensorT value);

  const TensorT& value(Var v) const { return nodes_.at(static_cast<size_t>(v.id)).value; }
  /// Gradient of the last backward() target w.r.t. v; zeros when v was unreached.
  TensorT grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(static_cast<size_t>(v.id)).requires_grad; }
  size_t size() const { return nodes_.size(); }
  /// Number of backward closures executed by the last backward() call.
  size_t backward_visits() const { return visits_; }

  void backward(Var loss);

  // Used by op implementations.
  Var record(std::string_view op, TensorT value, std::initializer_list<Var> parents, BackwardFn fn);
  TensorT& grad_buffer(Var v);
  /// Gradient flowing into v during backward(); only valid inside a backward closure.
  const TensorT& upstream(Var v) const { return nodes_.at(static_cast<size_t>(v.id)).grad; }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  size_t visits_ = 0;
};

using Graph = BasicGraph<float>;
using Graph64 = BasicGraph<double>;

/// Batch layout of a fused-head attention computation. Q/K/V tensors are
/// [batch*seq, heads*head_dim]; attention weights are [batch*heads*seq, seq].
struct AttnShape {
  int64_t batch = 1;
  int64_t seq = 1;
  int64_t heads = 1;
  int64_t head_dim = 1;
};

namespace ops {

template <typename T> Var add(BasicGraph<T>& g, Var a, Var b);
template <typename T> Var mul(BasicGraph<T>& g, Var a, Var b);
template <typename T> Var scale(BasicGraph<T>& g, Var a, double factor);
template <typename T> Var sum(BasicGraph<T>& g, Var a);
template <typename T> Var sum_squares(BasicGraph<T>& g, Var a);

/// a [m,k] x b [k,n].
template <typename T> Var matmul(BasicGraph<T>& g, Var a, Var b);
/// x [rows,in] x w [in,out] + bias [out]; bias may be an invalid Var.
template <typename T> Var linear(BasicGraph<T>& g, Var x, Var w, Var bias);

/// Row-wise standardization followed by gain/bias.
template <typename T> Var layer_norm(BasicGraph<T>& g, Var x, Var gain, Var bias, double eps = 1e-5);
/// GPT-2 tanh approximation.
template <typename T> Var gelu(BasicGraph<T>& g, Var x);

/// Row softmax where allowed[i] == 0 marks a masked entry. Masked outputs are
/// exactly zero. Throws on a row with no allowed entry.
template <typename T> Var softmax_rows(BasicGraph<T>& g, Var x, std::span<const uint8_t> allowed);

/// Scaled dot-product scores q.k / sqrt(head_dim) per (batch, head).
template <typename T> Var attention_scores(BasicGraph<T>& g, Var q, Var k, AttnShape shape);
/// Attention-weighted sum of values per (batch, head).
template <typename T> Var attention_mix(BasicGraph<T>& g, Var weights, Var v, AttnShape shape);

/// Replaces the value of x. No gradient flows back through the replacement.
template <typename T> Var override_value(BasicGraph<T>& g, Var x, BasicTensor<T> replacement);

/// Selects rows of the matrix view of x.
template <typename T> Var gather_rows(BasicGraph<T>& g, Var x, std::vector<int64_t> rows);

/// Mean over all elements of (pred - target)^2.
template <typename T> Var mse_loss(BasicGraph<T>& g, Var pred, Var target);

}  // namespace ops

/// Scalar-loop MSE, used outside the graph (validation, metrics).
double mse(std::span<const float> pred, std::span<const float> target);

}  // namespace retlab

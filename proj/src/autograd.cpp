// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <numbers>
#include <type_traits>

namespace retlab {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const Mat<T>>;
template <typename T>
using StridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
MapMat<T> as_matrix(BasicTensor<T>& t) {
  return MapMat<T>(t.data(), t.rows(), t.cols());
}
template <typename T>
ConstMapMat<T> as_matrix(const BasicTensor<T>& t) {
  return ConstMapMat<T>(t.data(), t.rows(), t.cols());
}

[[noreturn]] void fail(std::string_view op, const std::string& what) {
  throw NumericError(std::string(op) + ": " + what);
}

template <typename Msg>
void require(bool cond, std::string_view op, Msg&& what) {
  if (cond) return;
  if constexpr (std::is_invocable_v<Msg>) {
    fail(op, what());
  } else {
    fail(op, std::string(what));
  }
}

void require_same_shape(std::string_view op, const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  require(a == b, op, [&] { return "shape mismatch " + shape_string(a) + " vs " + shape_string(b); });
}

}  // namespace

template <typename T>
Var BasicGraph<T>::constant(TensorT value) {
  return record("constant", std::move(value), {}, nullptr);
}

template <typename T>
Var BasicGraph<T>::parameter(TensorT value) {
  Var v = record("parameter", std::move(value), {}, nullptr);
  nodes_.back().requires_grad = true;
  return v;
}

template <typename T>
typename BasicGraph<T>::TensorT BasicGraph<T>::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<size_t>(v.id));
  if (n.grad.empty() && !n.value.empty()) return TensorT(n.value.shape());
  return n.grad;
}

template <typename T>
Var BasicGraph<T>::record(std::string_view op, TensorT value, std::initializer_list<Var> parents,
                          BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + " produced non-finite values");
  }
  Node n;
  n.value = std::move(value);
  for (Var p : parents) {
    if (p.valid() && nodes_.at(static_cast<size_t>(p.id)).requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
typename BasicGraph<T>::TensorT& BasicGraph<T>::grad_buffer(Var v) {
  Node& n = nodes_.at(static_cast<size_t>(v.id));
  if (n.grad.empty()) n.grad = TensorT(n.value.shape());
  return n.grad;
}

template <typename T>
void BasicGraph<T>::backward(Var loss) {
  require(value(loss).size() == 1, "backward", "loss must be a scalar");
  for (Node& n : nodes_) n.grad = TensorT();
  visits_ = 0;
  grad_buffer(loss)[0] = T{1};
  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, Var{id});
    ++visits_;
  }
}

template class BasicGraph<float>;
template class BasicGraph<double>;

namespace ops {

template <typename T>
Var add(BasicGraph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require_same_shape("add", av.shape(), bv.shape());
  BasicTensor<T> out = av;
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record("add", std::move(out), {a, b}, [a, b](BasicGraph<T>& gr, Var self) {
    const auto& dy = gr.upstream(self);
    for (Var p : {a, b}) {
      if (!gr.requires_grad(p)) continue;
      auto& dp = gr.grad_buffer(p);
      for (size_t i = 0; i < dp.size(); ++i) dp[i] += dy[i];
    }
  });
}

template <typename T>
Var mul(BasicGraph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require_same_shape("mul", av.shape(), bv.shape());
  BasicTensor<T> out = av;
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.record("mul", std::move(out), {a, b}, [a, b](BasicGraph<T>& gr, Var self) {
    const auto& dy = gr.upstream(self);
    if (gr.requires_grad(a)) {
      const auto& bv = gr.value(b);
      auto& da = gr.grad_buffer(a);
      for (size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (gr.requires_grad(b)) {
      const auto& av = gr.value(a);
      auto& db = gr.grad_buffer(b);
      for (size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var scale(BasicGraph<T>& g, Var a, double factor) {
  BasicTensor<T> out = g.value(a);
  const T f = static_cast<T>(factor);
  for (auto& v : out.values()) v *= f;
  return g.record("scale", std::move(out), {a}, [a, f](BasicGraph<T>& gr, Var self) {
    const auto& dy = gr.upstream(self);
    auto& da = gr.grad_buffer(a);
    for (size_t i = 0; i < da.size(); ++i) da[i] += f * dy[i];
  });
}

template <typename T>
Var sum(BasicGraph<T>& g, Var a) {
  double acc = 0.0;
  for (T v : g.value(a).values()) acc += static_cast<double>(v);
  BasicTensor<T> out({1}, {static_cast<T>(acc)});
  return g.record("sum", std::move(out), {a}, [a](BasicGraph<T>& gr, Var self) {
    const T dy = gr.grad(self)[0];
    for (auto& v : gr.grad_buffer(a).values()) v += dy;
  });
}

template <typename T>
Var sum_squares(BasicGraph<T>& g, Var a) {
  double acc = 0.0;
  for (T v : g.value(a).values()) acc += static_cast<double>(v) * static_cast<double>(v);
  BasicTensor<T> out({1}, {static_cast<T>(acc)});
  return g.record("sum_squares", std::move(out), {a}, [a](BasicGraph<T>& gr, Var self) {
    const T dy = gr.grad(self)[0];
    const auto& av = gr.value(a);
    auto& da = gr.grad_buffer(a);
    for (size_t i = 0; i < da.size(); ++i) da[i] += T{2} * av[i] * dy;
  });
}

template <typename T>
Var matmul(BasicGraph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require(av.rank() == 2 && bv.rank() == 2, "matmul", "operands must be rank 2");
  require(av.dim(1) == bv.dim(0), "matmul", [&] {
    return "inner dimensions differ: " + shape_string(av.shape()) + " x " + shape_string(bv.shape());
  });
  BasicTensor<T> out({av.dim(0), bv.dim(1)});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  return g.record("matmul", std::move(out), {a, b}, [a, b](BasicGraph<T>& gr, Var self) {
    const auto& dy = gr.upstream(self);
    if (gr.requires_grad(a)) {
      as_matrix(gr.grad_buffer(a)).noalias() += as_matrix(dy) * as_matrix(gr.value(b)).transpose();
    }
    if (gr.requires_grad(b)) {
      as_matrix(gr.grad_buffer(b)).noalias() += as_matrix(gr.value(a)).transpose() * as_matrix(dy);
    }
  });
}

template <typename T>
Var linear(BasicGraph<T>& g, Var x, Var w, Var bias) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  require(wv.rank() == 2, "linear", "weight must be rank 2");
  require(xv.cols() == wv.dim(0), "linear", [&] {
    return "input width " + std::to_string(xv.cols()) + " vs weight " + shape_string(wv.shape());
  });
  std::vector<int64_t> shape = xv.shape();
  shape.back() = wv.dim(1);
  BasicTensor<T> out(shape);
  auto om = as_matrix(out);
  om.noalias() = as_matrix(xv) * as_matrix(wv);
  if (bias.valid()) {
    const auto& bv = g.value(bias);
    require(static_cast<int64_t>(bv.size()) == wv.dim(1), "linear", "bias length mismatch");
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data(), wv.dim(1));
  }
  return g.record("linear", std::move(out), {x, w, bias}, [x, w, bias](BasicGraph<T>& gr, Var self) {
    const auto& dy = gr.upstream(self);
    const auto dym = as_matrix(dy);
    if (gr.requires_grad(x)) {
      as_matrix(gr.grad_buffer(x)).noalias() += dym * as_matrix(gr.value(w)).transpose();
    }
    if (gr.requires_grad(w)) {
      as_matrix(gr.grad_buffer(w)).noalias() += as_matrix(gr.value(x)).transpose() * dym;
    }
    if (bias.valid() && gr.requires_grad(bias)) {
      auto& db = gr.grad_buffer(bias);
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db.data(), dym.cols()) += dym.colwise().sum();
    }
  });
}

template <typename T>
Var layer_norm(BasicGraph<T>& g, Var x, Var gain, Var bias, double eps) {
  const auto& xv = g.value(x);
  const int64_t rows = xv.rows();
  const int64_t width = xv.cols();
  require(width > 0, "layer_norm", "zero-length rows");
  require(static_cast<int64_t>(g.value(gain).size()) == width &&
              static_cast<int64_t>(g.value(bias).size()) == width,
          "layer_norm", "gain/bias length must equal row length");
  const auto& gv = g.value(gain);
  const auto& bv = g.value(bias);

  auto xhat = std::make_shared<BasicTensor<T>>(xv.shape());
  auto rstd = std::make_shared<AlignedVector<T>>(static_cast<size_t>(rows));
  BasicTensor<T> out(xv.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * width;
    double mean = 0.0;
    for (int64_t c = 0; c < width; ++c) mean += xr[c];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (int64_t c = 0; c < width; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(width);
    const T rs = static_cast<T>(1.0 / std::sqrt(var + eps));
    (*rstd)[static_cast<size_t>(r)] = rs;
    T* hr = xhat->data() + r * width;
    T* orow = out.data() + r * width;
    for (int64_t c = 0; c < width; ++c) {
      hr[c] = static_cast<T>(xr[c] - mean) * rs;
      orow[c] = hr[c] * gv[static_cast<size_t>(c)] + bv[static_cast<size_t>(c)];
    }
  }
  return g.record("layer_norm", std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat, rstd, rows, width](BasicGraph<T>& gr, Var self) {
                    const auto& dy = gr.upstream(self);
                    const auto& gv = gr.value(gain);
                    if (gr.requires_grad(gain) || gr.requires_grad(bias)) {
                      auto& dg = gr.grad_buffer(gain);
                      auto& db = gr.grad_buffer(bias);
                      for (int64_t r = 0; r < rows; ++r) {
                        for (int64_t c = 0; c < width; ++c) {
                          const size_t i = static_cast<size_t>(r * width + c);
                          dg[static_cast<size_t>(c)] += dy[i] * (*xhat)[i];
                          db[static_cast<size_t>(c)] += dy[i];
                        }
                      }
                    }
                    if (!gr.requires_grad(x)) return;
                    auto& dx = gr.grad_buffer(x);
                    AlignedVector<T> dxhat(static_cast<size_t>(width));
                    for (int64_t r = 0; r < rows; ++r) {
                      double mean_d = 0.0;
                      double mean_dh = 0.0;
                      for (int64_t c = 0; c < width; ++c) {
                        const size_t i = static_cast<size_t>(r * width + c);
                        dxhat[static_cast<size_t>(c)] = dy[i] * gv[static_cast<size_t>(c)];
                        mean_d += dxhat[static_cast<size_t>(c)];
                        mean_dh += dxhat[static_cast<size_t>(c)] * (*xhat)[i];
                      }
                      mean_d /= static_cast<double>(width);
                      mean_dh /= static_cast<double>(width);
                      const T rs = (*rstd)[static_cast<size_t>(r)];
                      for (int64_t c = 0; c < width; ++c) {
                        const size_t i = static_cast<size_t>(r * width + c);
                        dx[i] += rs * static_cast<T>(dxhat[static_cast<size_t>(c)] - mean_d -
                                                     (*xhat)[i] * mean_dh);
                      }
                    }
                  });
}

template <typename T>
Var gelu(BasicGraph<T>& g, Var x) {
  constexpr T k = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = static_cast<T>(0.044715);
  const auto& xv = g.value(x);
  BasicTensor<T> out(xv.shape());
  auto th = std::make_shared<AlignedVector<T>>(xv.size());
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto xa = Eigen::Map<const Arr>(xv.data(), static_cast<Eigen::Index>(xv.size()));
  auto ta = Eigen::Map<Arr>(th->data(), static_cast<Eigen::Index>(xv.size()));
  ta = (k * (xa + c * xa * xa * xa)).tanh();
  Eigen::Map<Arr>(out.data(), static_cast<Eigen::Index>(xv.size())) = T{0.5} * xa * (T{1} + ta);
  return g.record("gelu", std::move(out), {x}, [x, th](BasicGraph<T>& gr, Var self) {
    const auto& dy = gr.upstream(self);
    const auto& xv = gr.value(x);
    auto& dx = gr.grad_buffer(x);
    for (size_t i = 0; i < xv.size(); ++i) {
      const T v = xv[i];
      const T t = (*th)[i];
      const T dth = (T{1} - t * t) * k * (T{1} + T{3} * c * v * v);
      dx[i] += dy[i] * (T{0.5} * (T{1} + t) + T{0.5} * v * dth);
    }
  });
}

template <typename T>
Var softmax_rows(BasicGraph<T>& g, Var x, std::span<const uint8_t> allowed) {
  const auto& xv = g.value(x);
  require(allowed.size() == xv.size(), "softmax_rows", "mask shape must equal input shape");
  const int64_t rows = xv.rows();
  const int64_t width = xv.cols();
  BasicTensor<T> out(xv.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * width;
    const uint8_t* mr = allowed.data() + r * width;
    T* orow = out.data() + r * width;
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t c = 0; c < width; ++c) {
      if (mr[c]) mx = std::max(mx, xr[c]);
    }
    require(std::isfinite(mx), "softmax_rows", [r] { return "row " + std::to_string(r) + " is fully masked"; });
    T total = 0;
    for (int64_t c = 0; c < width; ++c) {
      orow[c] = mr[c] ? std::exp(xr[c] - mx) : T{0};
      total += orow[c];
    }
    const T inv = T{1} / total;
    for (int64_t c = 0; c < width; ++c) orow[c] *= inv;
  }
  return g.record("softmax_rows", std::move(out), {x}, [x, rows, width](BasicGraph<T>& gr, Var self) {
    const auto& dy = gr.upstream(self);
    const auto& y = gr.value(self);
    auto& dx = gr.grad_buffer(x);
    for (int64_t r = 0; r < rows; ++r) {
      const size_t base = static_cast<size_t>(r * width);
      T dot = 0;
      for (int64_t c = 0; c < width; ++c) dot += dy[base + c] * y[base + c];
      for (int64_t c = 0; c < width; ++c) dx[base + c] += y[base + c] * (dy[base + c] - dot);
    }
  });
}

namespace {

void check_attn(std::string_view op, const std::vector<int64_t>& shape, const AttnShape& s) {
  require(shape.size() == 2 && shape[0] == s.batch * s.seq && shape[1] == s.heads * s.head_dim, op, [&] {
    return "expected [" + std::to_string(s.batch * s.seq) + "," + std::to_string(s.heads * s.head_dim) +
           "], got " + shape_string(shape);
  });
}

}  // namespace

// Per-(example, head) kernels. Rows of Q/K/V blocks are strided by
// heads*head_dim; every inner loop is an axpy over a contiguous row.

template <typename T>
Var attention_scores(BasicGraph<T>& g, Var q, Var k, AttnShape s) {
  check_attn("attention_scores", g.value(q).shape(), s);
  check_attn("attention_scores", g.value(k).shape(), s);
  const int64_t width = s.heads * s.head_dim;
  const int64_t L = s.seq;
  const int64_t hd = s.head_dim;
  const T factor = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  BasicTensor<T> out({s.batch * s.heads * L, L});
  const T* qd = g.value(q).data();
  const T* kd = g.value(k).data();
  AlignedVector<T> kt(static_cast<size_t>(hd * L));
  for (int64_t b = 0; b < s.batch; ++b) {
    for (int64_t h = 0; h < s.heads; ++h) {
      const int64_t off = b * L * width + h * hd;
      for (int64_t j = 0; j < L; ++j) {
        for (int64_t d = 0; d < hd; ++d) kt[static_cast<size_t>(d * L + j)] = kd[off + j * width + d] * factor;
      }
      T* o = out.data() + (b * s.heads + h) * L * L;
      for (int64_t i = 0; i < L; ++i) {
        T* orow = o + i * L;
        const T* qrow = qd + off + i * width;
        for (int64_t d = 0; d < hd; ++d) {
          const T qv = qrow[d];
          const T* ktrow = kt.data() + d * L;
          for (int64_t j = 0; j < L; ++j) orow[j] += qv * ktrow[j];
        }
      }
    }
  }
  return g.record("attention_scores", std::move(out), {q, k},
                  [q, k, s, width, factor](BasicGraph<T>& gr, Var self) {
                    const auto& dy = gr.upstream(self);
                    const bool need_q = gr.requires_grad(q);
                    const bool need_k = gr.requires_grad(k);
                    T* dq = need_q ? gr.grad_buffer(q).data() : nullptr;
                    T* dk = need_k ? gr.grad_buffer(k).data() : nullptr;
                    const T* qd = gr.value(q).data();
                    const T* kd = gr.value(k).data();
                    const int64_t L = s.seq;
                    const int64_t hd = s.head_dim;
                    for (int64_t b = 0; b < s.batch; ++b) {
                      for (int64_t h = 0; h < s.heads; ++h) {
                        const int64_t off = b * L * width + h * hd;
                        const T* ds = dy.data() + (b * s.heads + h) * L * L;
                        for (int64_t i = 0; i < L; ++i) {
                          const T* dsrow = ds + i * L;
                          T* dqrow = need_q ? dq + off + i * width : nullptr;
                          const T* qrow = qd + off + i * width;
                          for (int64_t j = 0; j < L; ++j) {
                            const T w = dsrow[j] * factor;
                            if (w == T{0}) continue;
                            if (need_q) {
                              const T* krow = kd + off + j * width;
                              for (int64_t d = 0; d < hd; ++d) dqrow[d] += w * krow[d];
                            }
                            if (need_k) {
                              T* dkrow = dk + off + j * width;
                              for (int64_t d = 0; d < hd; ++d) dkrow[d] += w * qrow[d];
                            }
                          }
                        }
                      }
                    }
                  });
}

template <typename T>
Var attention_mix(BasicGraph<T>& g, Var weights, Var v, AttnShape s) {
  check_attn("attention_mix", g.value(v).shape(), s);
  const auto& wv = g.value(weights);
  require(wv.rows() == s.batch * s.heads * s.seq && wv.cols() == s.seq, "attention_mix",
          [&] { return "weights shape " + shape_string(wv.shape()); });
  const int64_t width = s.heads * s.head_dim;
  const int64_t L = s.seq;
  const int64_t hd = s.head_dim;
  BasicTensor<T> out({s.batch * L, width});
  const T* vd = g.value(v).data();
  for (int64_t b = 0; b < s.batch; ++b) {
    for (int64_t h = 0; h < s.heads; ++h) {
      const int64_t off = b * L * width + h * hd;
      const T* a = wv.data() + (b * s.heads + h) * L * L;
      for (int64_t i = 0; i < L; ++i) {
        T* orow = out.data() + off + i * width;
        for (int64_t j = 0; j < L; ++j) {
          const T w = a[i * L + j];
          if (w == T{0}) continue;
          const T* vrow = vd + off + j * width;
          for (int64_t d = 0; d < hd; ++d) orow[d] += w * vrow[d];
        }
      }
    }
  }
  return g.record("attention_mix", std::move(out), {weights, v},
                  [weights, v, s, width](BasicGraph<T>& gr, Var self) {
                    const auto& dy = gr.upstream(self);
                    const bool need_w = gr.requires_grad(weights);
                    const bool need_v = gr.requires_grad(v);
                    T* dw = need_w ? gr.grad_buffer(weights).data() : nullptr;
                    T* dv = need_v ? gr.grad_buffer(v).data() : nullptr;
                    const T* wd = gr.value(weights).data();
                    const T* vd = gr.value(v).data();
                    const int64_t L = s.seq;
                    const int64_t hd = s.head_dim;
                    AlignedVector<T> vt(static_cast<size_t>(hd * L));
                    for (int64_t b = 0; b < s.batch; ++b) {
                      for (int64_t h = 0; h < s.heads; ++h) {
                        const int64_t off = b * L * width + h * hd;
                        const int64_t aoff = (b * s.heads + h) * L * L;
                        if (need_w) {
                          for (int64_t j = 0; j < L; ++j) {
                            for (int64_t d = 0; d < hd; ++d) vt[static_cast<size_t>(d * L + j)] = vd[off + j * width + d];
                          }
                          for (int64_t i = 0; i < L; ++i) {
                            const T* dyrow = dy.data() + off + i * width;
                            T* dwrow = dw + aoff + i * L;
                            for (int64_t d = 0; d < hd; ++d) {
                              const T g0 = dyrow[d];
                              const T* vtrow = vt.data() + d * L;
                              for (int64_t j = 0; j < L; ++j) dwrow[j] += g0 * vtrow[j];
                            }
                          }
                        }
                        if (need_v) {
                          const T* a = wd + aoff;
                          for (int64_t i = 0; i < L; ++i) {
                            const T* dyrow = dy.data() + off + i * width;
                            for (int64_t j = 0; j < L; ++j) {
                              const T w = a[i * L + j];
                              if (w == T{0}) continue;
                              T* dvrow = dv + off + j * width;
                              for (int64_t d = 0; d < hd; ++d) dvrow[d] += w * dyrow[d];
                            }
                          }
                        }
                      }
                    }
                  });
}

template <typename T>
Var override_value(BasicGraph<T>& g, Var x, BasicTensor<T> replacement) {
  require_same_shape("override_value", g.value(x).shape(), replacement.shape());
  return g.record("override_value", std::move(replacement), {}, nullptr);
}

template <typename T>
Var gather_rows(BasicGraph<T>& g, Var x, std::vector<int64_t> rows) {
  const auto& xv = g.value(x);
  const int64_t width = xv.cols();
  const int64_t nrows = xv.rows();
  BasicTensor<T> out({static_cast<int64_t>(rows.size()), width});
  for (size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < nrows, "gather_rows", "row index out of range");
    std::copy_n(xv.data() + rows[i] * width, width, out.data() + static_cast<int64_t>(i) * width);
  }
  return g.record("gather_rows", std::move(out), {x},
                  [x, rows = std::move(rows), width](BasicGraph<T>& gr, Var self) {
                    const auto& dy = gr.upstream(self);
                    auto& dx = gr.grad_buffer(x);
                    for (size_t i = 0; i < rows.size(); ++i) {
                      const T* src = dy.data() + static_cast<int64_t>(i) * width;
                      T* dst = dx.data() + rows[i] * width;
                      for (int64_t c = 0; c < width; ++c) dst[c] += src[c];
                    }
                  });
}

template <typename T>
Var mse_loss(BasicGraph<T>& g, Var pred, Var target) {
  const auto& pv = g.value(pred);
  const auto& tv = g.value(target);
  require_same_shape("mse_loss", pv.shape(), tv.shape());
  require(!pv.empty(), "mse_loss", "empty input");
  double acc = 0.0;
  for (size_t i = 0; i < pv.size(); ++i) {
    const double d = static_cast<double>(pv[i]) - static_cast<double>(tv[i]);
    acc += d * d;
  }
  const double n = static_cast<double>(pv.size());
  BasicTensor<T> out({1}, {static_cast<T>(acc / n)});
  return g.record("mse_loss", std::move(out), {pred, target}, [pred, target, n](BasicGraph<T>& gr, Var self) {
    const T dy = gr.grad(self)[0];
    const auto& pv = gr.value(pred);
    const auto& tv = gr.value(target);
    const T f = static_cast<T>(2.0 / n) * dy;
    if (gr.requires_grad(pred)) {
      auto& dp = gr.grad_buffer(pred);
      for (size_t i = 0; i < dp.size(); ++i) dp[i] += f * (pv[i] - tv[i]);
    }
    if (gr.requires_grad(target)) {
      auto& dt = gr.grad_buffer(target);
      for (size_t i = 0; i < dt.size(); ++i) dt[i] -= f * (pv[i] - tv[i]);
    }
  });
}

#define RETLAB_INSTANTIATE_OPS(T)                                                         \
  template Var add<T>(BasicGraph<T>&, Var, Var);                                          \
  template Var mul<T>(BasicGraph<T>&, Var, Var);                                          \
  template Var scale<T>(BasicGraph<T>&, Var, double);                                     \
  template Var sum<T>(BasicGraph<T>&, Var);                                               \
  template Var sum_squares<T>(BasicGraph<T>&, Var);                                       \
  template Var matmul<T>(BasicGraph<T>&, Var, Var);                                       \
  template Var linear<T>(BasicGraph<T>&, Var, Var, Var);                                  \
  template Var layer_norm<T>(BasicGraph<T>&, Var, Var, Var, double);                      \
  template Var gelu<T>(BasicGraph<T>&, Var);                                              \
  template Var softmax_rows<T>(BasicGraph<T>&, Var, std::span<const uint8_t>);            \
  template Var attention_scores<T>(BasicGraph<T>&, Var, Var, AttnShape);                  \
  template Var attention_mix<T>(BasicGraph<T>&, Var, Var, AttnShape);                     \
  template Var override_value<T>(BasicGraph<T>&, Var, BasicTensor<T>);                    \
  template Var gather_rows<T>(BasicGraph<T>&, Var, std::vector<int64_t>);                 \
  template Var mse_loss<T>(BasicGraph<T>&, Var, Var);

RETLAB_INSTANTIATE_OPS(float)
RETLAB_INSTANTIATE_OPS(double)

#undef RETLAB_INSTANTIATE_OPS

}  // namespace ops

double mse(std::span<const float> pred, std::span<const float> target) {
  if (pred.size() != target.size()) throw NumericError("mse: length mismatch");
  if (pred.empty()) throw NumericError("mse: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

}  // namespace retlab

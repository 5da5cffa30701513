// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/optim.hpp"

#include <cmath>

namespace retlab {

void adam_update(std::span<const ParamSlot> params, AdamState& state, const AdamConfig& config) {
  if (state.m.empty()) {
    for (const ParamSlot& p : params) {
      state.m.emplace_back(p.value->shape());
      state.v.emplace_back(p.value->shape());
    }
  }
  if (state.m.size() != params.size()) {
    throw NumericError("adam_update: state holds " + std::to_string(state.m.size()) +
                       " tensors but " + std::to_string(params.size()) + " parameters were given");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].grad->shape() != params[i].value->shape() || state.m[i].shape() != params[i].value->shape()) {
      throw NumericError("adam_update: shape mismatch for parameter " + std::to_string(i));
    }
    if (!params[i].grad->all_finite()) {
      throw NumericError("adam_update: non-finite gradient for parameter " + std::to_string(i));
    }
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const float b1 = static_cast<float>(config.beta1);
  const float b2 = static_cast<float>(config.beta2);
  const float correction1 = static_cast<float>(1.0 - std::pow(config.beta1, t));
  const float correction2 = static_cast<float>(1.0 - std::pow(config.beta2, t));
  const float lr = static_cast<float>(config.lr);
  const float eps = static_cast<float>(config.eps);

  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].value;
    const Tensor& g = *params[i].grad;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const float decay = params[i].decay ? static_cast<float>(1.0 - config.lr * config.weight_decay) : 1.0f;
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      const float m_hat = m[j] / correction1;
      const float v_hat = v[j] / correction2;
      p[j] = p[j] * decay - lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

GradCheckResult grad_check(const ScalarFn& f, const Tensor64& x, double h, double eps) {
  GradCheckResult result;
  {
    Graph64 g;
    Var xv = g.parameter(x);
    Var y = f(g, xv);
    g.backward(y);
    result.analytic = g.grad(xv);
  }
  auto eval = [&](const Tensor64& at) {
    Graph64 g;
    Var xv = g.parameter(at);
    return g.value(f(g, xv))[0];
  };
  result.numeric = Tensor64(x.shape());
  Tensor64 probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval(probe);
    probe[i] = x[i] - h;
    const double down = eval(probe);
    probe[i] = x[i];
    result.numeric[i] = (up - down) / (2.0 * h);
    const double a = result.analytic[i];
    const double n = result.numeric[i];
    const double rel = std::abs(a - n) / (std::abs(a) + std::abs(n) + eps);
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = static_cast<int64_t>(i);
    }
  }
  return result;
}

}  // namespace retlab

// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "retlab/autograd.hpp"
#include "retlab/tensor.hpp"

namespace retlab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moment estimates, one pair per parameter tensor.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  int64_t step_count = 0;
};

/// One parameter slot handed to the optimizer. `decay` selects whether the
/// decoupled weight decay applies to it.
struct ParamSlot {
  Tensor* value = nullptr;
  const Tensor* grad = nullptr;
  bool decay = true;
};

/// Adam step with bias correction and decoupled weight decay:
///   p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
/// Lazily sizes the state on first use. Throws NumericError on non-finite gradients.
void adam_update(std::span<const ParamSlot> params, AdamState& state, const AdamConfig& config);

/// Differentiable scalar function of one tensor, built on a double-precision graph.
using ScalarFn = std::function<Var(Graph64&, Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  int64_t worst_index = -1;
  Tensor64 analytic;
  Tensor64 numeric;
};

/// Compares reverse-mode gradients with central differences coordinate by
/// coordinate. Relative error is |a - n| / (|a| + |n| + eps).
GradCheckResult grad_check(const ScalarFn& f, const Tensor64& x, double h = 1e-5, double eps = 1e-10);

}  // namespace retlab

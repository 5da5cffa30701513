// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Interval model of information flow through stacked attention layers.
//
// A sequence of 2D+1 positions carries pieces e_0..e_{2D}. Position 0 starts
// with {e_0}; position i >= 1 starts with {e_{i-1}, e_i}, so neighbours share
// exactly one piece. Under maximal flow every position, at every layer, pulls
// in everything held by any position it shares a piece with. Holdings stay
// contiguous, so each is an inclusive interval [lo, hi] of piece indices.

#pragma once

#include <cstdint>
#include <vector>

namespace retlab::flow {

struct Interval {
  int64_t lo = 0;
  int64_t hi = 0;
  int64_t length() const { return hi - lo + 1; }
  bool operator==(const Interval&) const = default;
};

struct FlowState {
  int64_t steps = 0;  // D
  int64_t t = 0;      // layers applied
  std::vector<Interval> intervals;  // one per position 0..2D

  bool operator==(const FlowState&) const = default;
};

FlowState initial_state(int64_t steps);

/// One layer of maximal flow. Runs in O(D) using the monotonicity of lo and hi
/// across positions, which is checked at runtime.
FlowState step(const FlowState& state);

/// True once position 0 holds e_{2D}, the piece that identifies x_D.
bool retrieved(const FlowState& state);

/// Layers needed before position 0 holds e_{2D}, by direct iteration.
int64_t min_layers(int64_t steps);

/// min{t : (3^t - 1) / 2 >= 2D}.
int64_t min_layers_closed_form(int64_t steps);

/// ceil(log_3(2D)) in integer arithmetic.
int64_t depth_lower_bound(int64_t steps);

/// Initial state followed by `layers` applications of step().
std::vector<FlowState> trace(int64_t steps, int64_t layers);

}  // namespace retlab::flow

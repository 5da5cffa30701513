// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "retlab/flow.hpp"

#include <stdexcept>
#include <string>

#include "retlab/task.hpp"

namespace retlab::flow {

FlowState initial_state(int64_t steps) {
  if (steps < 1) throw ConfigError("flow: D must be >= 1");
  FlowState s;
  s.steps = steps;
  s.intervals.resize(static_cast<size_t>(2 * steps + 1));
  s.intervals[0] = {0, 0};
  for (int64_t i = 1; i <= 2 * steps; ++i) s.intervals[static_cast<size_t>(i)] = {i - 1, i};
  return s;
}

FlowState step(const FlowState& state) {
  const auto& in = state.intervals;
  const size_t n = in.size();
  for (size_t i = 0; i < n; ++i) {
    if (in[i].lo > in[i].hi || in[i].lo < 0 || in[i].hi > 2 * state.steps) {
      throw std::logic_error("flow: malformed interval at position " + std::to_string(i));
    }
    if (i > 0 && (in[i].lo < in[i - 1].lo || in[i].hi < in[i - 1].hi)) {
      throw std::logic_error("flow: interval bounds not monotone at position " + std::to_string(i));
    }
  }
  // Positions overlapping [lo_i, hi_i] form a contiguous range [a, b]: the
  // first j with hi_j >= lo_i through the last j with lo_j <= hi_i. Both ends
  // only move right as i grows.
  FlowState out;
  out.steps = state.steps;
  out.t = state.t + 1;
  out.intervals.resize(n);
  size_t a = 0;
  size_t b = 0;
  for (size_t i = 0; i < n; ++i) {
    while (in[a].hi < in[i].lo) ++a;
    if (b < i) b = i;
    while (b + 1 < n && in[b + 1].lo <= in[i].hi) ++b;
    out.intervals[i] = {in[a].lo, in[b].hi};
  }
  return out;
}

bool retrieved(const FlowState& state) { return state.intervals.front().hi >= 2 * state.steps; }

int64_t min_layers(int64_t steps) {
  FlowState s = initial_state(steps);
  while (!retrieved(s)) s = step(s);
  return s.t;
}

int64_t min_layers_closed_form(int64_t steps) {
  if (steps < 1) throw ConfigError("flow: D must be >= 1");
  int64_t t = 0;
  int64_t reach = 0;  // (3^t - 1) / 2
  while (reach < 2 * steps) {
    reach = 3 * reach + 1;
    ++t;
  }
  return t;
}

int64_t depth_lower_bound(int64_t steps) {
  if (steps < 1) throw ConfigError("flow: D must be >= 1");
  int64_t t = 0;
  int64_t power = 1;
  while (power < 2 * steps) {
    power *= 3;
    ++t;
  }
  return t;
}

std::vector<FlowState> trace(int64_t steps, int64_t layers) {
  if (layers < 0) throw ConfigError("flow: layers must be >= 0");
  std::vector<FlowState> out{initial_state(steps)};
  for (int64_t l = 0; l < layers; ++l) out.push_back(step(out.back()));
  return out;
}

}  // namespace retlab::flow

// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "retlab/flow.hpp"
#include "retlab/task.hpp"

using namespace retlab;
using namespace retlab::flow;

namespace {

using Pieces = std::set<int64_t>;

// Quadratic reference: every position merges the piece sets of all positions
// it shares at least one piece with.
std::vector<Pieces> naive_step(const std::vector<Pieces>& in) {
  std::vector<Pieces> out(in.size());
  for (size_t i = 0; i < in.size(); ++i) {
    for (size_t j = 0; j < in.size(); ++j) {
      bool shared = false;
      for (int64_t p : in[j]) shared = shared || in[i].count(p);
      if (shared) out[i].insert(in[j].begin(), in[j].end());
    }
  }
  return out;
}

std::vector<Pieces> naive_initial(int64_t d) {
  std::vector<Pieces> s(static_cast<size_t>(2 * d + 1));
  s[0] = {0};
  for (int64_t i = 1; i <= 2 * d; ++i) s[static_cast<size_t>(i)] = {i - 1, i};
  return s;
}

int64_t pow3(int64_t t) {
  int64_t p = 1;
  while (t-- > 0) p *= 3;
  return p;
}

}  // namespace

TEST_CASE("initial state") {
  const FlowState s = initial_state(1);
  REQUIRE(s.intervals.size() == 3);
  CHECK(s.intervals[0].lo == 0);
  CHECK(s.intervals[0].hi == 0);
  CHECK(s.intervals[1].lo == 0);
  CHECK(s.intervals[1].hi == 1);
  CHECK(s.intervals[2].lo == 1);
  CHECK(s.intervals[2].hi == 2);
  CHECK(initial_state(5).intervals.size() == 11);
  // Adjacent positions share exactly one piece.
  const FlowState s7 = initial_state(7);
  for (size_t i = 1; i < s7.intervals.size(); ++i) {
    const auto& a = s7.intervals[i - 1];
    const auto& b = s7.intervals[i];
    CHECK(std::min(a.hi, b.hi) - std::max(a.lo, b.lo) + 1 == 1);
  }
  CHECK_THROWS_AS(initial_state(0), ConfigError);
}

TEST_CASE("first steps of the induction case") {
  const FlowState s1 = step(initial_state(1));
  CHECK(s1.intervals[0].lo == 0);
  CHECK(s1.intervals[0].hi == 1);
  CHECK_FALSE(retrieved(s1));
  const FlowState s2 = step(s1);
  CHECK(s2.intervals[0].hi == 2);
  CHECK(retrieved(s2));
}

TEST_CASE("step matches the quadratic set oracle") {
  for (int64_t d = 1; d <= 30; ++d) {
    FlowState s = initial_state(d);
    auto ref = naive_initial(d);
    for (int t = 0; t <= 5; ++t) {
      for (size_t i = 0; i < ref.size(); ++i) {
        const auto& iv = s.intervals[i];
        CHECK(*ref[i].begin() == iv.lo);
        CHECK(*ref[i].rbegin() == iv.hi);
        CHECK(static_cast<int64_t>(ref[i].size()) == iv.length());  // contiguous
      }
      s = step(s);
      ref = naive_step(ref);
    }
  }
}

TEST_CASE("interval lengths are bounded by 3^t + 1") {
  for (int64_t d = 1; d <= 1000; d += (d < 50 ? 1 : 37)) {
    FlowState s = initial_state(d);
    for (int64_t t = 0; t <= 10; ++t) {
      for (const auto& iv : s.intervals) CHECK(iv.length() <= pow3(t) + 1);
      s = step(s);
    }
  }
  // Far from the boundaries the bound is attained.
  FlowState s = initial_state(200);
  for (int64_t t = 1; t <= 3; ++t) {
    s = step(s);
    CHECK(s.intervals[200].length() == pow3(t) + 1);
  }
}

TEST_CASE("step is idempotent once everything is known") {
  FlowState s = initial_state(4);
  while (s.intervals.front().hi < 8 || s.intervals.back().lo > 0) s = step(s);
  const FlowState again = step(s);
  for (size_t i = 0; i < s.intervals.size(); ++i) {
    CHECK(again.intervals[i].lo == s.intervals[i].lo);
    CHECK(again.intervals[i].hi == s.intervals[i].hi);
  }
}

TEST_CASE("malformed states are rejected") {
  FlowState s = initial_state(3);
  s.intervals[2] = {5, 1};
  CHECK_THROWS_AS(step(s), std::logic_error);
  s = initial_state(3);
  s.intervals[3] = {0, 1};
  s.intervals[2] = {1, 2};
  CHECK_THROWS_AS(step(s), std::logic_error);
}

TEST_CASE("min_layers values") {
  CHECK(min_layers(1) == 2);
  CHECK(min_layers(4) == 3);
  for (int64_t d = 1; d <= 500; ++d) {
    CHECK(min_layers(d) == min_layers_closed_form(d));
    const auto target = 4 * d + 1;
    int64_t ceil_log = 0;
    while (pow3(ceil_log) < target) ++ceil_log;
    CHECK(min_layers(d) == ceil_log);
  }
}

TEST_CASE("depth_lower_bound values") {
  CHECK(depth_lower_bound(1) == 1);
  CHECK(depth_lower_bound(5) == 3);
  CHECK(depth_lower_bound(13) == 3);
  CHECK(depth_lower_bound(14) == 4);
  for (int64_t d = 1; d <= 1000000; d += (d < 1000 ? 1 : 997)) {
    CHECK(min_layers_closed_form(d) >= depth_lower_bound(d));
    CHECK(pow3(depth_lower_bound(d)) >= 2 * d);
    CHECK(pow3(depth_lower_bound(d) - 1) < 2 * d);
  }
}

TEST_CASE("trace records every layer") {
  const auto tr = trace(3, 4);
  REQUIRE(tr.size() == 5);
  for (int64_t t = 0; t < 5; ++t) CHECK(tr[static_cast<size_t>(t)].t == t);
  CHECK_THROWS_AS(trace(3, -1), ConfigError);
}

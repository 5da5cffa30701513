// Copyright 2026 The retlab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace retlab {

using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for item `index` of stream `stream`. Depends only on its arguments, so
/// items can be generated in any order or in parallel.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

/// Well-known seed streams.
namespace streams {
inline constexpr uint64_t kTrain = 0x7472'6169'6e00'0001ULL;
inline constexpr uint64_t kValidation = 0x7661'6c69'6400'0002ULL;
inline constexpr uint64_t kInit = 0x696e'6974'0000'0003ULL;
inline constexpr uint64_t kShuffle = 0x7368'7566'0000'0004ULL;
inline constexpr uint64_t kBench = 0x6265'6e63'6800'0005ULL;
inline constexpr uint64_t kGen = 0x6765'6e00'0000'0006ULL;
}  // namespace streams

}  // namespace retlab

// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace fgsn {

// splitmix64 finalizer; decorrelates derived stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d49b129c830a6ull;
  return x ^ (x >> 31);
}

/// Independent substream seed for (seed, stream_id). Used wherever a stage
/// needs its own generator so stages stay decoupled and reproducible.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_id) {
  return mix64(mix64(seed) ^ mix64(stream_id + 0x632be59bd9b4e019ull));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream_id) {
  return std::mt19937_64(derive_seed(seed, stream_id));
}

}  // namespace fgsn

#pragma once

// Internal seed-mixing helper shared by phantom generation and training.
// Stateless: every (seed, stream) pair maps to one well-scrambled 64-bit
// value, so independent consumers never share a random stream.

#include <cstdint>

namespace dcseg::detail {

// splitmix64 finalizer over a stream-offset seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t x = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace dcseg::detail

#pragma once

#include <cstdint>
#include <random>

namespace snpg {

using Rng = std::mt19937_64;

// splitmix64 finalizer chained over the arguments; used to derive independent
// substreams (per epoch/step, per sequence) from one seed.
constexpr uint64_t mix_seed(uint64_t seed, uint64_t a = 0, uint64_t b = 0) {
  auto mix = [](uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

inline Rng make_stream(uint64_t seed, uint64_t a = 0, uint64_t b = 0) {
  return Rng(mix_seed(seed, a, b));
}

// Uniform integer in [lo, hi].
inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform_real(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace snpg

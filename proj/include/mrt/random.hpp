#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace mrt {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent generator for (seed, stream, index); used so that parallel
/// work items draw the same numbers regardless of scheduling.
inline Rng stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  return Rng(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index));
}

/// Draws an index from a probability vector by inverse CDF.
inline std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = std::generate_canonical<double, 53>(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

}  // namespace mrt

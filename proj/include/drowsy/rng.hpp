#pragma once

#include <cstdint>
#include <random>

namespace drowsy {

// One root seed fans out into independent generator streams. Stream k is seeded
// with the k-th SplitMix64 output of the root, so adding a stream never perturbs
// the others.
enum class Stream : std::uint64_t {
  Init = 0,
  Shuffle = 1,
  Dropout = 2,
  Synth = 3,
};

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t root, Stream stream) noexcept {
  std::uint64_t state = root;
  std::uint64_t out = 0;
  for (std::uint64_t i = 0; i <= static_cast<std::uint64_t>(stream); ++i) out = splitmix64(state);
  return out;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, Stream stream) { return Rng(stream_seed(root, stream)); }

/// Uniform double in [0, 1) from the top 53 bits of one draw.
template <class Urbg>
double uniform01(Urbg& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <class Urbg>
double uniform(Urbg& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

}  // namespace drowsy

#pragma once

#include <cstdint>
#include <random>

namespace glmprog {

using Rng = std::mt19937_64;

// SplitMix64 output function. Bijective on 64-bit words, so distinct
// counters always give distinct outputs.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based child seed: the stream for (parent, index) depends only on
// those two numbers, never on how many other streams were drawn before it.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return mix64(mix64(parent) ^ mix64(index * 0xd1b54a32d192ed03ULL + 1));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(mix64(seed)); }

// Named sub-streams used inside one simulation replicate.
enum class Stream : std::uint64_t {
  historical = 1,
  trial = 2,
  crossfit = 3,
  shuffle = 4,
  learner_cv = 5,
  glm_cv = 6,
};

constexpr std::uint64_t derive_seed(std::uint64_t parent, Stream s) {
  return derive_seed(parent, static_cast<std::uint64_t>(s));
}

}  // namespace glmprog

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bilinsim {

// All randomness flows through mt19937_64 streams keyed by (purpose, seed).
// Two streams with different purposes never share state, so adding a new
// consumer does not perturb existing ones. Gaussian draws use
// std::normal_distribution; results are reproducible on one toolchain, not
// across standard library implementations.
using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline Rng make_stream(std::string_view purpose, std::uint64_t seed) {
  std::uint64_t s = splitmix64(fnv1a(purpose) ^ splitmix64(seed));
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
  return Rng(seq);
}

inline double normal(Rng& rng, double mean = 0.0, double sd = 1.0) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace bilinsim

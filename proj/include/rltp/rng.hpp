#pragma once

#include <cstdint>
#include <random>

namespace rltp {

// splitmix64; used to derive well-separated engine seeds from (seed, tag).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

using Rng = std::mt19937_64;

// Deterministic stream derivation: equal (seed, tag) pairs always yield the
// same engine state; distinct tags give independent streams. The environment
// keeps one stream per draw purpose so that the number of draws consumed by
// one purpose never shifts another.
inline Rng derive_stream(std::uint64_t seed, std::uint64_t tag) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(tag ^ 0xA5A5A5A5A5A5A5A5ULL)));
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Folds an index into a base seed, e.g. to give each episode its own seed
// family while keeping the whole run reproducible from one root seed.
inline std::uint64_t combine_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ (index + 0x6A09E667F3BCC909ULL));
}

// Binomial(n, p) by counting uniform draws below p. Consumes exactly n draws,
// which keeps paired runs with different p coupled through the same uniforms.
inline long binomial_coupled(Rng& rng, long n, double p) {
  long hits = 0;
  for (long k = 0; k < n; ++k) {
    if (uniform01(rng) < p) ++hits;
  }
  return hits;
}

}  // namespace rltp

#pragma once

#include <cstdint>
#include <random>

namespace amoclust {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seed for item `i` of a run seeded with `base`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t i) { return mix64(mix64(base) ^ mix64(i + 0x632be59bd9b4e019ULL)); }

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(base, a), b);
}

}  // namespace amoclust

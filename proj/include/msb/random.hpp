#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace msb {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent child seeds from one seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) { return Rng(mix_seed(seed, stream)); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// Standard Gumbel draw, -log(-log U) with U in (0,1).
inline double gumbel(Rng& rng) {
  double u = uniform01(rng);
  constexpr double tiny = std::numeric_limits<double>::min();
  if (u < tiny) u = tiny;
  return -std::log(-std::log(u));
}

inline double beta_draw(Rng& rng, double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  const double s = x + y;
  return s > 0.0 ? x / s : (uniform01(rng) < a / (a + b) ? 1.0 : 0.0);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace msb

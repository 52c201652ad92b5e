// Deterministic random streams.
//
// Every random decision in the library flows through SplitMix64 so that a
// run is a pure function of its seeds and can be reproduced from another
// language. Stream derivation: derive_seed() feeds each tag through one
// splitmix step, XOR-folded with the golden-ratio increment, so
// (seed, client, round, epoch) tuples map to independent streams.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "fedais/common.hpp"

namespace fedais {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t splitmix64_step(std::uint64_t& state) {
  state += kGolden;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Deterministic sub-stream seed from a base seed and integer tags.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = base;
  std::uint64_t out = splitmix64_step(s);
  for (std::uint64_t t : tags) {
    s = out ^ (t * kGolden);
    out = splitmix64_step(s);
  }
  return out;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_step(state_); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log() argument.
  double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via 128-bit multiply.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal, Box-Muller with one cached value.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Gamma(alpha, 1), Marsaglia-Tsang squeeze; alpha < 1 uses the
  // boost G(alpha) = G(alpha + 1) * U^(1/alpha).
  double gamma(double alpha) {
    if (!(alpha > 0.0)) throw ParameterError("gamma: alpha must be > 0");
    if (alpha < 1.0) {
      double u = uniform_pos();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    double d = alpha - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform_pos();
      double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::vector<double> dirichlet(double alpha, std::size_t k) {
    std::vector<double> x(k);
    double sum = 0.0;
    for (auto& v : x) {
      v = gamma(alpha);
      sum += v;
    }
    for (auto& v : x) v /= sum;
    return x;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // m distinct indices from [0, n), Fisher-Yates prefix, returned sorted.
  std::vector<std::uint32_t> sample_indices(std::uint32_t n, std::uint32_t m);

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

inline std::vector<std::uint32_t> Rng::sample_indices(std::uint32_t n, std::uint32_t m) {
  if (m > n) throw ParameterError("sample_indices: m > n");
  std::vector<std::uint32_t> pool(n);
  for (std::uint32_t i = 0; i < n; ++i) pool[i] = i;
  for (std::uint32_t i = 0; i < m; ++i) {
    std::uint32_t j = i + static_cast<std::uint32_t>(below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace fedais

#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

#include "replin/common.hpp"

namespace replin {

// 64-bit finalizer used as the core mixing step (splitmix64).
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h + kGolden + v * 0xff51afd7ed558ccdULL);
}

std::uint64_t hash_string(std::string_view s);

// Derives a stream key from a seed and a list of tag values. Equal inputs give
// equal keys; any change to one component changes the key.
std::uint64_t stream_key(std::uint64_t seed,
                         std::initializer_list<std::uint64_t> parts);
std::uint64_t stream_key(std::uint64_t seed, std::string_view tag,
                         std::uint64_t a = 0, std::uint64_t b = 0,
                         std::uint64_t c = 0);

// Counter-based generator: the n-th output is a pure function of (key, n), so
// streams keyed by (seed, node, sample index) can be regenerated in isolation
// and sampling order never changes results.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() { return mix64(key_ + (++ctr_) * kGolden); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    return next_u64() % n;  // bias is negligible for n << 2^64
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via the polar method; pairs are cached.
  double normal();

  double gamma(double shape);          // scale 1, shape > 0
  double beta(double alpha, double b); // alpha, b > 0

  int categorical(const Vec& probs);

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Block fills used by the hot simulation paths; vectorized Box-Muller.
void fill_uniform(CounterRng& rng, Arr& out);
void fill_normal(CounterRng& rng, Arr& out);

}  // namespace replin

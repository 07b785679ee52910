#include "replin/rng.hpp"

#include <cmath>

namespace replin {

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a, then strengthened
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

std::uint64_t stream_key(std::uint64_t seed,
                         std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(seed ^ 0x5bf03635d2d86eadULL);
  for (std::uint64_t p : parts) h = hash_combine(h, p);
  return h;
}

std::uint64_t stream_key(std::uint64_t seed, std::string_view tag,
                         std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return stream_key(seed, {hash_string(tag), a, b, c});
}

double CounterRng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  cached_ = v * m;
  has_cached_ = true;
  return u * m;
}

double CounterRng::gamma(double shape) {
  if (!(shape > 0.0)) throw Error("invalid distribution parameter", "gamma shape must be > 0");
  if (shape < 1.0) {
    // Boost to shape+1 and scale back (Marsaglia-Tsang section 6).
    const double u = uniform();
    return gamma(shape + 1.0) * std::pow(u > 0 ? u : 0x1.0p-60, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double CounterRng::beta(double alpha, double b) {
  if (!(alpha > 0.0) || !(b > 0.0))
    throw Error("invalid distribution parameter", "beta parameters must be > 0");
  if (alpha == 1.0) return 1.0 - std::pow(1.0 - uniform(), 1.0 / b);
  if (b == 1.0) return std::pow(uniform(), 1.0 / alpha);
  const double x = gamma(alpha);
  const double y = gamma(b);
  return x / (x + y);
}

int CounterRng::categorical(const Vec& probs) {
  if (probs.size() == 0) throw Error("invalid distribution parameter", "empty categorical");
  const double u = uniform() * probs.sum();
  double acc = 0.0;
  for (int i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return static_cast<int>(probs.size()) - 1;
}

void fill_uniform(CounterRng& rng, Arr& out) {
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = rng.uniform();
}

void fill_normal(CounterRng& rng, Arr& out) {
  const Eigen::Index n = out.size();
  const Eigen::Index half = (n + 1) / 2;
  Arr u1(half), u2(half);
  for (Eigen::Index i = 0; i < half; ++i) {
    double u = rng.uniform();
    u1[i] = u > 0 ? u : 0x1.0p-60;
    u2[i] = rng.uniform();
  }
  const Arr r = (-2.0 * u1.log()).sqrt();
  const Arr t = (2.0 * M_PI) * u2;
  out.head(half) = r * t.cos();
  out.tail(n - half) = (r * t.sin()).head(n - half);
}

}  // namespace replin

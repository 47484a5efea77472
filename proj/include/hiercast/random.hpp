#pragma once

// Seeded random streams and the handful of non-standard variates the samplers need.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace hiercast {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for (base, id0, id1, ...). Streams for distinct id
// tuples do not overlap in practice, so callers can fan work out across threads
// without sharing generator state.
template <class... Ids>
constexpr std::uint64_t derive_seed(std::uint64_t base, Ids... ids) noexcept {
  std::uint64_t h = mix64(base);
  ((h = mix64(h ^ static_cast<std::uint64_t>(ids))), ...);
  return h;
}

inline double uniform_open(Rng& rng) {
  // (0, 1): 53 random bits shifted off zero.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double std_normal(Rng& rng) { return std::normal_distribution<double>{}(rng); }

namespace detail {

inline double upper_tail(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

// Standard normal restricted to [a, b] with a >= 0.
inline double right_truncated_std_normal(Rng& rng, double a, double b) {
  const double qa = upper_tail(a);
  if (qa > 1e-300) {
    const double qb = std::isfinite(b) ? upper_tail(b) : 0.0;
    const double q = qa - uniform_open(rng) * (qa - qb);
    double z = std::sqrt(2.0) * boost::math::erfc_inv(2.0 * q);
    return std::clamp(z, a, b);
  }
  // Deep tail: exponential proposal with the optimal rate.
  const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a - std::log(uniform_open(rng)) / rate;
    if (z > b) continue;
    if (uniform_open(rng) < std::exp(-0.5 * (z - rate) * (z - rate))) return z;
  }
}

}  // namespace detail

// Normal(mean, sd) restricted to [lo, hi] by inverse CDF.
inline double truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
  const double a = (lo - mean) / sd;
  const double b = (hi - mean) / sd;
  double z;
  if (a >= 0.0) {
    z = detail::right_truncated_std_normal(rng, a, b);
  } else if (b <= 0.0) {
    z = -detail::right_truncated_std_normal(rng, -b, -a);
  } else {
    // Interval straddles the mode; both CDF values are well conditioned.
    const double pa = 1.0 - detail::upper_tail(a);
    const double pb = 1.0 - detail::upper_tail(b);
    const double p = pa + uniform_open(rng) * (pb - pa);
    z = -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
    z = std::clamp(z, a, b);
  }
  return std::clamp(mean + sd * z, lo, hi);
}

// Gamma(shape, 1) conditioned on G >= lower.
inline double lower_truncated_gamma(Rng& rng, double shape, double lower) {
  if (lower <= 0.0) return std::gamma_distribution<double>{shape, 1.0}(rng);
  const double tail = boost::math::gamma_q(shape, lower);
  if (tail > 0.25) {
    std::gamma_distribution<double> gamma{shape, 1.0};
    for (;;) {
      const double g = gamma(rng);
      if (g >= lower) return g;
    }
  }
  if (tail > 1e-300) {
    const double g = boost::math::gamma_q_inv(shape, uniform_open(rng) * tail);
    return std::max(g, lower);
  }
  // Far tail: the density is close to exponential past `lower`.
  const double rate = std::max(1.0 - (shape - 1.0) / lower, 1e-3);
  return lower - std::log(uniform_open(rng)) / rate;
}

// Inverse-gamma(shape, scale) variate v restricted to v <= upper.
inline double upper_truncated_inverse_gamma(Rng& rng, double shape, double scale, double upper) {
  const double lower = std::isfinite(upper) ? scale / upper : 0.0;
  return scale / lower_truncated_gamma(rng, shape, lower);
}

}  // namespace hiercast

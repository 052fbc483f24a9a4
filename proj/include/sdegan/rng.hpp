#pragma once

// Deterministic random sources: a splitmix64 generator with keyed
// substreams (so that parallel sampling is independent of thread count),
// the standard-normal inverse CDF, and Halton quasi-random points.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sdegan {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Inverse standard-normal CDF, rational approximation with absolute
// error below 1.2e-9 over (0,1).  Coefficient table:
//   central region |p-1/2| <= 0.47575: x = q*P(q^2)/Q(q^2), q = p-1/2
//   tails: x = +-P(t)/Q(t), t = sqrt(-2 ln(min(p,1-p)))
inline double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("inverse_normal_cdf: p must be in (0,1)");
  static constexpr double a[6] = {
      -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[5] = {
      -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[6] = {
      -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[4] = {
      7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Counter-free stateful generator.  Streams for parallel work are derived
// by hashing a key path, never by splitting shared state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Warm the state so that nearby seeds decorrelate.
    splitmix64(state_);
    splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in the open interval (0,1).
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform in (-half_width, half_width).
  double uniform_sym(double half_width) {
    return (2.0 * uniform01() - 1.0) * half_width;
  }

  double normal() { return inverse_normal_cdf(uniform01()); }

 private:
  std::uint64_t state_;
};

// A (seed, path...) key identifying one reproducible stream.  Typical use:
//   StreamKey{seed}.child(kTagPaths).child(path_index).rng()
struct StreamKey {
  std::uint64_t key = 0;

  StreamKey child(std::uint64_t id) const {
    std::uint64_t s = key ^ (0x9e3779b97f4a7c15ull + id);
    return StreamKey{splitmix64(s)};
  }
  Rng rng() const { return Rng(key); }
};

inline constexpr std::array<int, 50> kHaltonPrimes = {
    2,   3,   5,   7,   11,  13,  17,  19,  23,  29,  31,  37,  41,
    43,  47,  53,  59,  61,  67,  71,  73,  79,  83,  89,  97,  101,
    103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167,
    173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229};

// Radical inverse of `index` in the given base; index >= 1.
inline double radical_inverse(std::uint64_t index, int base) {
  double inv_base = 1.0 / base;
  double factor = inv_base;
  double value = 0.0;
  while (index > 0) {
    value += factor * static_cast<double>(index % base);
    index /= base;
    factor *= inv_base;
  }
  return value;
}

// Halton point in (0,1)^dim for index >= 1, bases = first `dim` primes.
inline std::vector<double> halton_point(std::uint64_t index, int dim) {
  if (index < 1) throw std::invalid_argument("halton_point: index must be >= 1");
  if (dim < 1 || dim > static_cast<int>(kHaltonPrimes.size()))
    throw std::invalid_argument("halton_point: dim must be in [1,50]");
  std::vector<double> point(dim);
  for (int j = 0; j < dim; ++j)
    point[j] = radical_inverse(index, kHaltonPrimes[j]);
  return point;
}

// Halton point mapped componentwise through the standard-normal inverse CDF.
inline std::vector<double> halton_gaussian(std::uint64_t index, int dim) {
  std::vector<double> point = halton_point(index, dim);
  for (double& v : point) v = inverse_normal_cdf(v);
  return point;
}

}  // namespace sdegan

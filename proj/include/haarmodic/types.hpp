#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>

namespace haarmodic {

// Row-major so that a stacked batch of per-sample slabs is contiguous.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Rng = std::mt19937_64;

// Portable draws. std:: distributions are implementation-defined, and every
// run must be reproducible from its seed alone.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Unbiased integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

template <typename Scalar>
bool all_finite(const Matrix<Scalar>& m) {
  return m.allFinite();
}

}  // namespace haarmodic

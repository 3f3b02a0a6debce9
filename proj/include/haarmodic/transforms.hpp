#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "haarmodic/error.hpp"
#include "haarmodic/types.hpp"

namespace haarmodic {

// ---------------------------------------------------------------------------
// DCT-II
// ---------------------------------------------------------------------------

/// Orthonormal n x n DCT-II basis, D[k][t] = sqrt(2/n) c_k cos(pi (2t+1) k / 2n)
/// with c_0 = 1/sqrt(2). D is orthogonal, so the inverse transform is D^T.
template <typename Scalar = double>
Matrix<Scalar> dct_matrix(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidDimension, "dct_matrix: n must be >= 1");
  Matrix<Scalar> d(n, n);
  const long double pi = std::numbers::pi_v<long double>;
  const long double scale = std::sqrt(2.0L / static_cast<long double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const long double ck = (k == 0) ? 1.0L / std::sqrt(2.0L) : 1.0L;
    for (std::size_t t = 0; t < n; ++t) {
      const long double angle = pi * static_cast<long double>((2 * t + 1) * k) /
                                static_cast<long double>(2 * n);
      d(k, t) = static_cast<Scalar>(scale * ck * std::cos(angle));
    }
  }
  return d;
}

/// Immutable DCT basis for one length. Applies along the row (temporal) axis
/// of a T x C matrix, i.e. column-wise.
template <typename Scalar>
class DctBasis {
 public:
  DctBasis() = default;
  explicit DctBasis(std::size_t n) : matrix_(dct_matrix<Scalar>(n)) {}

  std::size_t size() const { return static_cast<std::size_t>(matrix_.rows()); }
  const Matrix<Scalar>& matrix() const { return matrix_; }

  Matrix<Scalar> apply(const Matrix<Scalar>& x, bool inverse) const {
    if (static_cast<std::size_t>(x.rows()) != size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "dct_apply: expected " + std::to_string(size()) + " rows, got " +
                      std::to_string(x.rows()));
    }
    if (inverse) return matrix_.transpose() * x;
    return matrix_ * x;
  }

 private:
  Matrix<Scalar> matrix_;
};

template <typename Scalar>
Matrix<Scalar> dct_apply(const DctBasis<Scalar>& basis, const Matrix<Scalar>& x, bool inverse) {
  return basis.apply(x, inverse);
}

// ---------------------------------------------------------------------------
// 2D Haar
// ---------------------------------------------------------------------------

using HaarKernel = std::array<std::array<int, 2>, 2>;

enum class HaarBand : int { kScale = 0, kHorizontal = 1, kVertical = 2, kDiagonal = 3 };

/// Scale, horizontal, vertical and diagonal kernels, indexed [row][col].
/// Row index runs along the S axis, column index along the temporal axis.
struct HaarKernelSet {
  static constexpr std::array<HaarKernel, 4> kernels = {{
      {{{1, 1}, {1, 1}}},
      {{{1, -1}, {1, -1}}},
      {{{1, 1}, {-1, -1}}},
      {{{1, -1}, {-1, 1}}},
  }};

  static constexpr const HaarKernel& get(HaarBand band) {
    return kernels[static_cast<int>(band)];
  }

  static constexpr int inner(const HaarKernel& a, const HaarKernel& b) {
    return a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1];
  }
};

/// S x T' grid at some resolution level. pad_trail[i] is the number of zero
/// columns (0 or 1) appended before the i-th zoom-in.
template <typename Scalar>
struct SpectrumGrid {
  Matrix<Scalar> data;
  std::vector<int> pad_trail;

  std::size_t level() const { return pad_trail.size(); }
};

inline std::size_t zoomed_cols(std::size_t cols) { return (cols + 1) / 2; }

namespace detail {

// One grid slab: in is S x T', out is 2S x ceil(T'/2). Odd T' reads an implicit
// zero column on the right.
template <typename Scalar, typename In, typename Out>
void haar_forward_slab(const In& in, Out&& out) {
  const Eigen::Index s = in.rows();
  const Eigen::Index t = in.cols();
  const Eigen::Index half_rows = s / 2;
  const Eigen::Index out_cols = (t + 1) / 2;
  constexpr auto& K = HaarKernelSet::kernels;
  for (Eigen::Index x = 0; x < half_rows; ++x) {
    for (Eigen::Index y = 0; y < out_cols; ++y) {
      const Scalar p00 = in(2 * x, 2 * y);
      const Scalar p10 = in(2 * x + 1, 2 * y);
      const bool has_right = 2 * y + 1 < t;
      const Scalar p01 = has_right ? in(2 * x, 2 * y + 1) : Scalar(0);
      const Scalar p11 = has_right ? in(2 * x + 1, 2 * y + 1) : Scalar(0);
      for (int k = 0; k < 4; ++k) {
        const Scalar acc = p00 * Scalar(K[k][0][0]) + p01 * Scalar(K[k][0][1]) +
                           p10 * Scalar(K[k][1][0]) + p11 * Scalar(K[k][1][1]);
        out(k * half_rows + x, y) = Scalar(0.5) * acc;
      }
    }
  }
}

// Inverse of haar_forward_slab. in is 4R x T'', out is 2R x (2T'' - pad).
template <typename Scalar, typename In, typename Out>
void haar_inverse_slab(const In& in, Out&& out, int pad) {
  const Eigen::Index band_rows = in.rows() / 4;
  const Eigen::Index t = in.cols();
  const Eigen::Index out_cols = 2 * t - pad;
  constexpr auto& K = HaarKernelSet::kernels;
  for (Eigen::Index x = 0; x < band_rows; ++x) {
    for (Eigen::Index y = 0; y < t; ++y) {
      Scalar patch[2][2] = {{0, 0}, {0, 0}};
      for (int k = 0; k < 4; ++k) {
        const Scalar c = in(k * band_rows + x, y);
        patch[0][0] += c * Scalar(K[k][0][0]);
        patch[0][1] += c * Scalar(K[k][0][1]);
        patch[1][0] += c * Scalar(K[k][1][0]);
        patch[1][1] += c * Scalar(K[k][1][1]);
      }
      out(2 * x, 2 * y) = Scalar(0.5) * patch[0][0];
      out(2 * x + 1, 2 * y) = Scalar(0.5) * patch[1][0];
      if (2 * y + 1 < out_cols) {
        out(2 * x, 2 * y + 1) = Scalar(0.5) * patch[0][1];
        out(2 * x + 1, 2 * y + 1) = Scalar(0.5) * patch[1][1];
      }
    }
  }
}

}  // namespace detail

/// Forward 2D Haar on a vertical stack of grids, each `group_rows` tall.
/// Every slab is transformed independently and the outputs are stacked in the
/// same order, each 2*group_rows tall.
template <typename Scalar>
Matrix<Scalar> haar_forward_stacked(const Matrix<Scalar>& in, Eigen::Index group_rows) {
  if (group_rows <= 0 || in.rows() % group_rows != 0) {
    throw Error(ErrorCode::kShapeMismatch, "haar zoom-in: rows not a multiple of the group size");
  }
  if (group_rows % 2 != 0) {
    throw Error(ErrorCode::kInvalidDimension,
                "haar zoom-in: row count " + std::to_string(group_rows) + " is odd");
  }
  if (in.cols() == 0) throw Error(ErrorCode::kInvalidDimension, "haar zoom-in: empty grid");
  const Eigen::Index groups = in.rows() / group_rows;
  const Eigen::Index out_cols = (in.cols() + 1) / 2;
  Matrix<Scalar> out(groups * 2 * group_rows, out_cols);
  for (Eigen::Index g = 0; g < groups; ++g) {
    detail::haar_forward_slab<Scalar>(in.middleRows(g * group_rows, group_rows),
                                      out.middleRows(g * 2 * group_rows, 2 * group_rows));
  }
  return out;
}

/// Inverse of haar_forward_stacked. `group_rows` is the zoomed slab height
/// (4 band blocks); `pad` is the column count dropped after reconstruction.
template <typename Scalar>
Matrix<Scalar> haar_inverse_stacked(const Matrix<Scalar>& in, Eigen::Index group_rows, int pad) {
  if (group_rows <= 0 || in.rows() % group_rows != 0) {
    throw Error(ErrorCode::kShapeMismatch, "haar zoom-out: rows not a multiple of the group size");
  }
  if (group_rows % 4 != 0) {
    throw Error(ErrorCode::kInvalidDimension,
                "haar zoom-out: row count " + std::to_string(group_rows) + " not divisible by 4");
  }
  if (pad != 0 && pad != 1) throw Error(ErrorCode::kInvalidArgument, "haar zoom-out: pad must be 0 or 1");
  if (in.cols() == 0 || 2 * in.cols() - pad <= 0) {
    throw Error(ErrorCode::kInvalidDimension, "haar zoom-out: empty grid");
  }
  const Eigen::Index groups = in.rows() / group_rows;
  Matrix<Scalar> out(groups * (group_rows / 2), 2 * in.cols() - pad);
  for (Eigen::Index g = 0; g < groups; ++g) {
    detail::haar_inverse_slab<Scalar>(in.middleRows(g * group_rows, group_rows),
                                      out.middleRows(g * (group_rows / 2), group_rows / 2), pad);
  }
  return out;
}

template <typename Scalar>
SpectrumGrid<Scalar> haar_zoom_in(const SpectrumGrid<Scalar>& grid) {
  if (grid.data.rows() % 2 != 0) {
    throw Error(ErrorCode::kInvalidDimension,
                "haar_zoom_in: row count " + std::to_string(grid.data.rows()) + " is odd");
  }
  SpectrumGrid<Scalar> out;
  out.data = haar_forward_stacked<Scalar>(grid.data, grid.data.rows());
  out.pad_trail = grid.pad_trail;
  out.pad_trail.push_back(static_cast<int>(grid.data.cols() % 2));
  return out;
}

template <typename Scalar>
SpectrumGrid<Scalar> haar_zoom_out(const SpectrumGrid<Scalar>& grid) {
  if (grid.level() == 0) throw Error(ErrorCode::kCannotZoomOut, "haar_zoom_out: grid is at level 0");
  if (grid.data.rows() % 4 != 0) {
    throw Error(ErrorCode::kInvalidDimension,
                "haar_zoom_out: row count " + std::to_string(grid.data.rows()) +
                    " not divisible by 4");
  }
  SpectrumGrid<Scalar> out;
  out.pad_trail = grid.pad_trail;
  const int pad = out.pad_trail.back();
  out.pad_trail.pop_back();
  out.data = haar_inverse_stacked<Scalar>(grid.data, grid.data.rows(), pad);
  return out;
}

}  // namespace haarmodic

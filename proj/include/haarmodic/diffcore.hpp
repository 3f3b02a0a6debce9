#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "haarmodic/error.hpp"
#include "haarmodic/transforms.hpp"
#include "haarmodic/types.hpp"

namespace haarmodic {

// Trainable tensor. grad is an accumulator filled by Tape::backward, so it is
// writable through a const reference.
template <typename Scalar>
struct Param {
  Matrix<Scalar> value;
  mutable Matrix<Scalar> grad;

  Param() = default;
  Param(Eigen::Index rows, Eigen::Index cols)
      : value(Matrix<Scalar>::Zero(rows, cols)), grad(Matrix<Scalar>::Zero(rows, cols)) {}

  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
};

/// y = x W^T + b, weight is out x in, bias is 1 x out.
template <typename Scalar>
struct AffineParams {
  Param<Scalar> weight;
  Param<Scalar> bias;

  AffineParams() = default;
  AffineParams(Eigen::Index in, Eigen::Index out) : weight(out, in), bias(1, out) {}

  Eigen::Index in() const { return weight.value.cols(); }
  Eigen::Index out() const { return weight.value.rows(); }
};

template <typename Scalar>
struct LayerNormParams {
  Param<Scalar> gain;
  Param<Scalar> shift;
  Scalar eps = Scalar(1e-5);

  LayerNormParams() = default;
  explicit LayerNormParams(Eigen::Index n, Scalar epsilon = Scalar(1e-5))
      : gain(1, n), shift(1, n), eps(epsilon) {
    gain.value.setOnes();
  }

  Eigen::Index size() const { return gain.value.cols(); }
};

enum class FixedMapKind { kDct, kIdct, kHaarIn, kHaarOut };

/// A constant linear map applied independently to each `group_rows`-tall slab
/// of a stacked batch. For the DCT kinds the basis length must equal
/// group_rows; for kHaarOut, group_rows is the zoomed slab height.
template <typename Scalar>
struct FixedMap {
  FixedMapKind kind;
  Eigen::Index group_rows;
  const DctBasis<Scalar>* basis = nullptr;
  int pad = 0;

  static FixedMap dct(const DctBasis<Scalar>& b) {
    return {FixedMapKind::kDct, static_cast<Eigen::Index>(b.size()), &b, 0};
  }
  static FixedMap idct(const DctBasis<Scalar>& b) {
    return {FixedMapKind::kIdct, static_cast<Eigen::Index>(b.size()), &b, 0};
  }
  static FixedMap haar_in(Eigen::Index group_rows) {
    return {FixedMapKind::kHaarIn, group_rows, nullptr, 0};
  }
  static FixedMap haar_out(Eigen::Index group_rows, int pad) {
    return {FixedMapKind::kHaarOut, group_rows, nullptr, pad};
  }
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> left_multiply_groups(const Matrix<Scalar>& m, const Matrix<Scalar>& x) {
  const Eigen::Index n = m.cols();
  if (x.rows() % n != 0) {
    throw Error(ErrorCode::kShapeMismatch,
                "dct: " + std::to_string(x.rows()) + " rows is not a multiple of " +
                    std::to_string(n));
  }
  const Eigen::Index groups = x.rows() / n;
  Matrix<Scalar> out(groups * m.rows(), x.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    out.middleRows(g * m.rows(), m.rows()).noalias() = m * x.middleRows(g * n, n);
  }
  return out;
}

// Forward application. For kHaarIn, `pad` receives the column padding used.
template <typename Scalar>
Matrix<Scalar> apply_fixed(const FixedMap<Scalar>& map, const Matrix<Scalar>& x, int* pad) {
  switch (map.kind) {
    case FixedMapKind::kDct:
      return left_multiply_groups<Scalar>(map.basis->matrix(), x);
    case FixedMapKind::kIdct:
      return left_multiply_groups<Scalar>(map.basis->matrix().transpose(), x);
    case FixedMapKind::kHaarIn:
      if (pad != nullptr) *pad = static_cast<int>(x.cols() % 2);
      return haar_forward_stacked<Scalar>(x, map.group_rows);
    case FixedMapKind::kHaarOut:
      return haar_inverse_stacked<Scalar>(x, map.group_rows, map.pad);
  }
  return {};
}

// Every map is orthogonal (Haar up to the zero pad), so the adjoint of each
// direction is the opposite direction.
template <typename Scalar>
Matrix<Scalar> apply_fixed_adjoint(const FixedMap<Scalar>& map, const Matrix<Scalar>& g, int pad) {
  switch (map.kind) {
    case FixedMapKind::kDct:
      return left_multiply_groups<Scalar>(map.basis->matrix().transpose(), g);
    case FixedMapKind::kIdct:
      return left_multiply_groups<Scalar>(map.basis->matrix(), g);
    case FixedMapKind::kHaarIn:
      return haar_inverse_stacked<Scalar>(g, 2 * map.group_rows, pad);
    case FixedMapKind::kHaarOut:
      return haar_forward_stacked<Scalar>(g, map.group_rows / 2);
  }
  return {};
}

}  // namespace detail

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Define-by-run computation record. Each op appends one node holding its
/// output and a closure that pushes the node's gradient to its inputs and to
/// any parameters it read.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;

  Var input(Mat value) {
    Node node;
    node.value = std::move(value);
    node.leaf = true;
    node.leaf_grad = Mat::Zero(node.value.rows(), node.value.cols());
    return push(std::move(node));
  }

  const Mat& value(Var v) const { return nodes_.at(v.id).value; }

  /// Accumulated gradient for inputs, gradient of the last backward otherwise.
  const Mat& grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.leaf ? n.leaf_grad : n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  Var affine(Var x, const AffineParams<Scalar>& p) {
    const Mat& in = value(x);
    if (in.cols() != p.in()) {
      throw Error(ErrorCode::kShapeMismatch, "affine: input has " + std::to_string(in.cols()) +
                                                 " columns, weight expects " +
                                                 std::to_string(p.in()));
    }
    Node node;
    node.value.noalias() = in * p.weight.value.transpose();
    node.value.rowwise() += p.bias.value.row(0);
    const std::size_t xi = x.id;
    const AffineParams<Scalar>* params = &p;
    node.backward = [xi, params](Tape& t, const Mat& g) {
      const Mat& xin = t.nodes_[xi].value;
      params->weight.grad.noalias() += g.transpose() * xin;
      params->bias.grad.row(0) += g.colwise().sum();
      t.nodes_[xi].grad.noalias() += g * params->weight.value;
    };
    return push(std::move(node));
  }

  /// Per-row normalization with population variance.
  Var layer_norm(Var x, const LayerNormParams<Scalar>& p) {
    const Mat& in = value(x);
    const Eigen::Index n = in.cols();
    if (n == 0) throw Error(ErrorCode::kInvalidDimension, "layer_norm: empty rows");
    if (n != p.size()) {
      throw Error(ErrorCode::kShapeMismatch, "layer_norm: row length " + std::to_string(n) +
                                                 " != gain length " + std::to_string(p.size()));
    }
    Mat normed(in.rows(), n);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_sigma(in.rows());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      const Scalar mean = in.row(r).mean();
      const Scalar var = (in.row(r).array() - mean).square().mean();
      const Scalar denom = var + p.eps;
      if (!(denom > Scalar(0))) {
        throw Error(ErrorCode::kDivisionGuard,
                    "layer_norm: zero variance with eps = 0 at row " + std::to_string(r));
      }
      inv_sigma(r) = Scalar(1) / std::sqrt(denom);
      normed.row(r) = (in.row(r).array() - mean) * inv_sigma(r);
    }
    Node node;
    node.value = (normed.array().rowwise() * p.gain.value.row(0).array()).matrix();
    node.value.rowwise() += p.shift.value.row(0);
    const std::size_t xi = x.id;
    const LayerNormParams<Scalar>* params = &p;
    node.backward = [xi, params, normed = std::move(normed), inv_sigma = std::move(inv_sigma)](
                        Tape& t, const Mat& g) {
      params->gain.grad.row(0) += (g.array() * normed.array()).colwise().sum().matrix();
      params->shift.grad.row(0) += g.colwise().sum();
      const Mat gn = (g.array().rowwise() * params->gain.value.row(0).array()).matrix();
      Mat& gx = t.nodes_[xi].grad;
      const Scalar inv_n = Scalar(1) / static_cast<Scalar>(gn.cols());
      for (Eigen::Index r = 0; r < gn.rows(); ++r) {
        const Scalar mean_g = gn.row(r).sum() * inv_n;
        const Scalar mean_gx = gn.row(r).dot(normed.row(r)) * inv_n;
        gx.row(r).array() +=
            inv_sigma(r) * (gn.row(r).array() - mean_g - normed.row(r).array() * mean_gx);
      }
    };
    return push(std::move(node));
  }

  /// Transposes every `group_rows` x C slab into a C x group_rows slab.
  Var transpose(Var x, Eigen::Index group_rows) {
    Node node;
    node.value = transpose_groups(value(x), group_rows);
    const std::size_t xi = x.id;
    const Eigen::Index out_group = value(x).cols();
    node.backward = [xi, out_group](Tape& t, const Mat& g) {
      t.nodes_[xi].grad += transpose_groups(g, out_group);
    };
    return push(std::move(node));
  }

  Var fixed_linear(Var x, const FixedMap<Scalar>& map) {
    Node node;
    int pad = 0;
    node.value = detail::apply_fixed(map, value(x), &pad);
    const std::size_t xi = x.id;
    node.backward = [xi, map, pad](Tape& t, const Mat& g) {
      t.nodes_[xi].grad += detail::apply_fixed_adjoint(map, g, pad);
    };
    return push(std::move(node));
  }

  Var add(Var a, Var b) {
    const Mat& va = value(a);
    const Mat& vb = value(b);
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "add: operand shapes differ");
    }
    Node node;
    node.value = va + vb;
    const std::size_t ai = a.id, bi = b.id;
    node.backward = [ai, bi](Tape& t, const Mat& g) {
      t.nodes_[ai].grad += g;
      t.nodes_[bi].grad += g;
    };
    return push(std::move(node));
  }

  Var slice_rows(Var x, Eigen::Index begin, Eigen::Index count) {
    const Mat& in = value(x);
    if (begin < 0 || count < 0 || begin + count > in.rows()) {
      throw Error(ErrorCode::kShapeMismatch, "slice_rows: range outside input");
    }
    Node node;
    node.value = in.middleRows(begin, count);
    const std::size_t xi = x.id;
    node.backward = [xi, begin, count](Tape& t, const Mat& g) {
      t.nodes_[xi].grad.middleRows(begin, count) += g;
    };
    return push(std::move(node));
  }

  /// Propagates `upstream` (d loss / d out) back through every recorded op.
  /// Parameter and input gradients accumulate across calls.
  void backward(Var out, const Mat& upstream) {
    Node& root = nodes_.at(out.id);
    if (upstream.rows() != root.value.rows() || upstream.cols() != root.value.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "backward: upstream shape differs from output");
    }
    for (Node& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
    root.grad = upstream;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) {
        n.backward(*this, n.grad);
      } else if (n.leaf) {
        n.leaf_grad += n.grad;
      }
    }
  }

  static Mat transpose_groups(const Mat& in, Eigen::Index group_rows) {
    if (group_rows <= 0 || in.rows() % group_rows != 0) {
      throw Error(ErrorCode::kShapeMismatch, "transpose: rows not a multiple of the group size");
    }
    const Eigen::Index groups = in.rows() / group_rows;
    const Eigen::Index cols = in.cols();
    Mat out(groups * cols, group_rows);
    for (Eigen::Index g = 0; g < groups; ++g) {
      out.middleRows(g * cols, cols) = in.middleRows(g * group_rows, group_rows).transpose();
    }
    return out;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool leaf = false;
    Mat leaf_grad;
    std::function<void(Tape&, const Mat&)> backward;
  };

  Var push(Node node) {
    node.grad = Mat::Zero(node.value.rows(), node.value.cols());
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

/// max_i |analytic_i - numeric_i| / max(1, |analytic_i|)
inline double max_relative_error(const Matrix<double>& analytic, const Matrix<double>& numeric) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

/// Central-difference check of `analytic` against `eval()`, perturbing `point`
/// in place (restored afterwards). `coords` selects flat indices to probe;
/// empty means all of them.
template <typename Eval>
double grad_check_inplace(Eval&& eval, Matrix<double>& point, const Matrix<double>& analytic,
                          const std::vector<Eigen::Index>& coords = {}, double step = 1e-6) {
  double worst = 0.0;
  auto probe = [&](Eigen::Index i) {
    double& slot = point.data()[i];
    const double saved = slot;
    // Use the steps actually representable at this coordinate.
    const double hi = saved + step;
    const double lo = saved - step;
    slot = hi;
    const double up = eval();
    slot = lo;
    const double down = eval();
    slot = saved;
    const double numeric = (up - down) / (hi - lo);
    const double a = analytic.data()[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  };
  if (coords.empty()) {
    for (Eigen::Index i = 0; i < point.size(); ++i) probe(i);
  } else {
    for (Eigen::Index i : coords) probe(i);
  }
  return worst;
}

/// grad_check for a function given as x -> (value, gradient).
template <typename ValueAndGrad>
double grad_check(ValueAndGrad&& f, const Matrix<double>& x, double step = 1e-6) {
  Matrix<double> point = x;
  const Matrix<double> analytic = f(point).second;
  return grad_check_inplace([&] { return f(point).first; }, point, analytic, {}, step);
}

/// Up to `count` distinct flat indices into a tensor of `size` entries.
inline std::vector<Eigen::Index> sample_coords(Rng& rng, Eigen::Index size, std::size_t count) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(size));
  for (Eigen::Index i = 0; i < size; ++i) all[static_cast<std::size_t>(i)] = i;
  if (all.size() <= count) return all;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + uniform_index(rng, all.size() - i);
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace haarmodic

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "haarmodic/diffcore.hpp"
#include "haarmodic/error.hpp"
#include "haarmodic/transforms.hpp"
#include "haarmodic/types.hpp"

namespace haarmodic {

struct ModelConfig {
  int input_frames = 50;   // T
  int output_frames = 10;  // delta t
  int joints = 22;         // K
  int blocks = 4;          // m
  int levels = 3;
  std::vector<int> fc_per_level = {4, 2, 1};
  bool use_dct = true;
  bool use_ln = true;
  std::uint64_t seed = 0;

  int channels() const { return 3 * joints; }

  /// Ladder with the same FC count at every level.
  static std::vector<int> uniform_ladder(int levels, int length) {
    return std::vector<int>(static_cast<std::size_t>(std::max(levels, 0)), length);
  }

  /// Column count at each resolution level: T, ceil(T/2), ...
  std::vector<int> level_cols() const {
    std::vector<int> cols{input_frames};
    for (int l = 1; l < levels; ++l) cols.push_back(static_cast<int>(zoomed_cols(cols.back())));
    return cols;
  }

  /// Per-sample row count at each level: C, 2C, 4C, ...
  std::vector<int> level_rows() const {
    std::vector<int> rows{channels()};
    for (int l = 1; l < levels; ++l) rows.push_back(2 * rows.back());
    return rows;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, msg); };
    if (input_frames < 1) fail("input_frames must be >= 1");
    if (output_frames < 1) fail("output_frames must be >= 1");
    if (joints < 1) fail("joints must be >= 1");
    if (blocks < 0) fail("blocks must be >= 0");
    if (levels < 1) fail("levels must be >= 1");
    if (static_cast<int>(fc_per_level.size()) != levels) {
      fail("fc_per_level has " + std::to_string(fc_per_level.size()) + " entries, levels is " +
           std::to_string(levels));
    }
    for (int n : fc_per_level) {
      if (n < 1) fail("fc_per_level entries must be >= 1");
    }
    if (levels > 1 && channels() % 2 != 0) fail("3 * joints must be even to zoom in");
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename Scalar>
struct FCBlockParams {
  AffineParams<Scalar> affine;
  LayerNormParams<Scalar> ln;

  FCBlockParams() = default;
  explicit FCBlockParams(Eigen::Index n) : affine(n, n), ln(n) {}
};

template <typename Scalar>
struct MRHaarBlockParams {
  std::vector<std::vector<FCBlockParams<Scalar>>> levels;
  FCBlockParams<Scalar> merge;
};

template <typename Scalar>
struct Network {
  ModelConfig config;
  AffineParams<Scalar> fc_pre;
  std::vector<MRHaarBlockParams<Scalar>> blocks;
  AffineParams<Scalar> fc_post;
  AffineParams<Scalar> temporal_head;
  DctBasis<Scalar> dct_in;
  DctBasis<Scalar> dct_out;

  /// Visits every trainable tensor in checkpoint order. Layer-norm tensors
  /// are skipped when the config disables layer norm.
  template <typename Fn>
  void for_each_param(Fn&& fn) const {
    auto affine = [&](const std::string& name, const AffineParams<Scalar>& a) {
      fn(name + ".weight", a.weight);
      fn(name + ".bias", a.bias);
    };
    auto fc = [&](const std::string& name, const FCBlockParams<Scalar>& b) {
      affine(name, b.affine);
      if (config.use_ln) {
        fn(name + ".ln.gain", b.ln.gain);
        fn(name + ".ln.shift", b.ln.shift);
      }
    };
    affine("fc_pre", fc_pre);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string prefix = "block" + std::to_string(i);
      for (std::size_t l = 0; l < blocks[i].levels.size(); ++l) {
        for (std::size_t j = 0; j < blocks[i].levels[l].size(); ++j) {
          fc(prefix + ".level" + std::to_string(l) + ".fc" + std::to_string(j), blocks[i].levels[l][j]);
        }
      }
      fc(prefix + ".merge", blocks[i].merge);
    }
    affine("fc_post", fc_post);
    affine("head", temporal_head);
  }

  /// Mutable variant for optimizers and checkpoint loading.
  template <typename Fn>
  void for_each_param_mut(Fn&& fn) {
    for_each_param([&](const std::string& name, const Param<Scalar>& p) {
      fn(name, const_cast<Param<Scalar>&>(p));
    });
  }

  std::vector<Param<Scalar>*> params() {
    std::vector<Param<Scalar>*> out;
    for_each_param_mut([&](const std::string&, Param<Scalar>& p) { out.push_back(&p); });
    return out;
  }

  void zero_grad() const {
    for_each_param([](const std::string&, const Param<Scalar>& p) { p.zero_grad(); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_param([&](const std::string&, const Param<Scalar>& p) {
      n += static_cast<std::size_t>(p.value.size());
    });
    return n;
  }
};

/// Deterministic initialization from config.seed. Affine weights and biases
/// are uniform in +-1/sqrt(fan_in); fc_post and the head bias start at zero so
/// the untrained predictor repeats the last observed frame.
template <typename Scalar>
Network<Scalar> build(const ModelConfig& config) {
  config.validate();
  Network<Scalar> net;
  net.config = config;
  const Eigen::Index c = config.channels();
  const std::vector<int> cols = config.level_cols();
  net.fc_pre = AffineParams<Scalar>(c, c);
  net.blocks.resize(static_cast<std::size_t>(config.blocks));
  for (auto& block : net.blocks) {
    block.levels.resize(static_cast<std::size_t>(config.levels));
    for (int l = 0; l < config.levels; ++l) {
      for (int j = 0; j < config.fc_per_level[static_cast<std::size_t>(l)]; ++j) {
        block.levels[static_cast<std::size_t>(l)].emplace_back(cols[static_cast<std::size_t>(l)]);
      }
    }
    block.merge = FCBlockParams<Scalar>(config.input_frames);
  }
  net.fc_post = AffineParams<Scalar>(c, c);
  net.temporal_head = AffineParams<Scalar>(config.input_frames, config.output_frames);
  net.dct_in = DctBasis<Scalar>(static_cast<std::size_t>(config.input_frames));
  net.dct_out = DctBasis<Scalar>(static_cast<std::size_t>(config.output_frames));

  Rng rng(config.seed);
  const Param<Scalar>* zero_init[] = {&net.fc_post.weight, &net.fc_post.bias, &net.temporal_head.bias};
  Eigen::Index fan_in = 1;
  net.for_each_param_mut([&](const std::string& name, Param<Scalar>& p) {
    p.zero_grad();
    if (name.ends_with(".weight")) fan_in = p.value.cols();
    if (std::find(std::begin(zero_init), std::end(zero_init), &p) != std::end(zero_init) ||
        name.ends_with(".ln.shift")) {
      p.value.setZero();
      return;
    }
    if (name.ends_with(".ln.gain")) {
      p.value.setOnes();
      return;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      p.value.data()[i] = static_cast<Scalar>(uniform(rng, -bound, bound));
    }
  });
  return net;
}

template <typename Scalar>
Network<Scalar> build(ModelConfig config, std::uint64_t seed) {
  config.seed = seed;
  return build<Scalar>(config);
}

namespace detail {

template <typename Scalar>
Var fc_block(Tape<Scalar>& tape, Var x, const FCBlockParams<Scalar>& p, bool use_ln) {
  const Var y = tape.affine(x, p.affine);
  return use_ln ? tape.layer_norm(y, p.ln) : y;
}

}  // namespace detail

/// One MR-Haar block on a stack of C x T grids. Level l runs its FC chain;
/// the output of its first FC block is zoomed in to seed level l+1. Each
/// chain is zoomed back out to level 0, the arrivals are summed, passed
/// through the merge FC block, and added to the block input.
template <typename Scalar>
Var mr_haar_block(Tape<Scalar>& tape, Var x, const MRHaarBlockParams<Scalar>& p,
                  const ModelConfig& config) {
  const std::vector<int> rows = config.level_rows();
  const std::vector<int> cols = config.level_cols();
  Var seed = x;
  Var merged{};
  bool have_merged = false;
  for (int l = 0; l < config.levels; ++l) {
    const auto& chain = p.levels[static_cast<std::size_t>(l)];
    Var cur = seed;
    Var first{};
    for (std::size_t j = 0; j < chain.size(); ++j) {
      cur = detail::fc_block(tape, cur, chain[j], config.use_ln);
      if (j == 0) first = cur;
    }
    for (int k = l; k > 0; --k) {
      const int pad = cols[static_cast<std::size_t>(k - 1)] % 2;
      cur = tape.fixed_linear(cur, FixedMap<Scalar>::haar_out(rows[static_cast<std::size_t>(k)], pad));
    }
    merged = have_merged ? tape.add(merged, cur) : cur;
    have_merged = true;
    if (l + 1 < config.levels) {
      seed = tape.fixed_linear(first, FixedMap<Scalar>::haar_in(rows[static_cast<std::size_t>(l)]));
    }
  }
  const Var out = detail::fc_block(tape, merged, p.merge, config.use_ln);
  return tape.add(out, x);
}

/// Records the full network on `tape`. `input` is a stack of B windows, each
/// T x C; the result is a stack of B residual windows, each dt x C.
template <typename Scalar>
Var forward(Tape<Scalar>& tape, const Network<Scalar>& net, Var input) {
  const ModelConfig& cfg = net.config;
  const Eigen::Index t = cfg.input_frames;
  const Eigen::Index c = cfg.channels();
  const Matrix<Scalar>& in = tape.value(input);
  if (in.cols() != c || in.rows() % t != 0 || in.rows() == 0) {
    throw Error(ErrorCode::kShapeMismatch,
                "forward: expected a stack of " + std::to_string(t) + " x " + std::to_string(c) +
                    " windows, got " + std::to_string(in.rows()) + " x " + std::to_string(in.cols()));
  }
  Var x = input;
  if (cfg.use_dct) x = tape.fixed_linear(x, FixedMap<Scalar>::dct(net.dct_in));
  x = tape.affine(x, net.fc_pre);
  x = tape.transpose(x, t);
  for (const auto& block : net.blocks) x = mr_haar_block(tape, x, block, cfg);
  x = tape.transpose(x, c);
  x = tape.affine(x, net.fc_post);
  x = tape.transpose(x, t);
  x = tape.affine(x, net.temporal_head);
  x = tape.transpose(x, c);
  if (cfg.use_dct) x = tape.fixed_linear(x, FixedMap<Scalar>::idct(net.dct_out));
  return x;
}

template <typename Scalar>
Matrix<Scalar> stack_rows(const std::vector<Matrix<Scalar>>& parts) {
  if (parts.empty()) return {};
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix<Scalar> out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

/// Residual prediction for a stack of windows.
template <typename Scalar>
Matrix<Scalar> forward_stacked(const Network<Scalar>& net, const Matrix<Scalar>& windows) {
  Tape<Scalar> tape;
  return tape.value(forward(tape, net, tape.input(windows)));
}

template <typename Scalar>
Matrix<Scalar> forward(const Network<Scalar>& net, const Matrix<Scalar>& window) {
  return forward_stacked(net, window);
}

/// Adds each window's last frame to every row of its residual block.
template <typename Scalar>
Matrix<Scalar> add_last_frame(const Matrix<Scalar>& residual, const Matrix<Scalar>& windows,
                              Eigen::Index input_frames, Eigen::Index output_frames) {
  Matrix<Scalar> out = residual;
  const Eigen::Index batch = windows.rows() / input_frames;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto last = windows.row((b + 1) * input_frames - 1);
    for (Eigen::Index r = 0; r < output_frames; ++r) out.row(b * output_frames + r) += last;
  }
  return out;
}

/// Absolute-coordinate prediction, dt x C per window.
template <typename Scalar>
Matrix<Scalar> predict_stacked(const Network<Scalar>& net, const Matrix<Scalar>& windows) {
  return add_last_frame(forward_stacked(net, windows), windows, net.config.input_frames,
                        net.config.output_frames);
}

template <typename Scalar>
Matrix<Scalar> predict(const Network<Scalar>& net, const Matrix<Scalar>& window) {
  if (window.rows() != net.config.input_frames) {
    throw Error(ErrorCode::kShapeMismatch, "predict: window must have input_frames rows");
  }
  return predict_stacked(net, window);
}

/// Auto-regressive rollout over a batch of windows. Each pass predicts dt
/// frames, appends them and slides the T-frame window forward.
template <typename Scalar>
std::vector<Matrix<Scalar>> rollout_batch(const Network<Scalar>& net,
                                          const std::vector<Matrix<Scalar>>& windows,
                                          int horizon_frames) {
  if (horizon_frames < 1) throw Error(ErrorCode::kInvalidArgument, "rollout: horizon must be >= 1");
  const Eigen::Index t = net.config.input_frames;
  const Eigen::Index dt = net.config.output_frames;
  const Eigen::Index c = net.config.channels();
  const std::size_t batch = windows.size();
  std::vector<Matrix<Scalar>> out(batch, Matrix<Scalar>(horizon_frames, c));
  if (batch == 0) return out;
  for (const auto& w : windows) {
    if (w.rows() != t || w.cols() != c) throw Error(ErrorCode::kShapeMismatch, "rollout: bad window shape");
  }
  Matrix<Scalar> current = stack_rows(windows);
  Eigen::Index produced = 0;
  while (produced < horizon_frames) {
    const Matrix<Scalar> pred = predict_stacked(net, current);
    const Eigen::Index take = std::min<Eigen::Index>(dt, horizon_frames - produced);
    Matrix<Scalar> next(current.rows(), c);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto eb = static_cast<Eigen::Index>(b);
      out[b].middleRows(produced, take) = pred.middleRows(eb * dt, take);
      // Slide: keep the newest T frames of history + prediction.
      Matrix<Scalar> history(t + dt, c);
      history << current.middleRows(eb * t, t), pred.middleRows(eb * dt, dt);
      next.middleRows(eb * t, t) = history.bottomRows(t);
    }
    current = std::move(next);
    produced += take;
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> rollout(const Network<Scalar>& net, const Matrix<Scalar>& window, int horizon_frames) {
  return rollout_batch(net, std::vector<Matrix<Scalar>>{window}, horizon_frames).front();
}

/// Repeats the last observed frame.
template <typename Scalar>
Matrix<Scalar> zero_velocity_baseline(const Matrix<Scalar>& window, int horizon_frames) {
  if (horizon_frames < 1) throw Error(ErrorCode::kInvalidArgument, "baseline: horizon must be >= 1");
  if (window.rows() < 1) throw Error(ErrorCode::kShapeMismatch, "baseline: empty window");
  return window.row(window.rows() - 1).replicate(horizon_frames, 1);
}

}  // namespace haarmodic

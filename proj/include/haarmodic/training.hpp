#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "haarmodic/checkpoint.hpp"
#include "haarmodic/data.hpp"
#include "haarmodic/diffcore.hpp"
#include "haarmodic/error.hpp"
#include "haarmodic/model.hpp"

namespace haarmodic {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossBreakdown {
  double total = 0.0;
  double l_re = 0.0;
  double l_v = 0.0;
  // Set when dt < 2 and the velocity term is identically zero.
  bool degenerate_velocity = false;
};

template <typename Scalar>
struct LossResult {
  LossBreakdown value;
  Matrix<Scalar> grad;  // d total / d pred
};

/// Position + velocity loss on a stack of dt x C windows, averaged over the
/// stack. Per window:
///   l_re = 1/dt      sum_t mean_j |p'_tj - p_tj|
///   l_v  = 1/(dt-1)  sum_t mean_j |(p'_{t+1,j} - p'_tj) - (p_{t+1,j} - p_tj)|
template <typename Scalar>
LossResult<Scalar> loss(const Matrix<Scalar>& pred, const Matrix<Scalar>& target, Eigen::Index frames) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "loss: prediction and target shapes differ");
  }
  if (pred.cols() % 3 != 0 || pred.cols() == 0) {
    throw Error(ErrorCode::kShapeMismatch, "loss: column count not a multiple of 3");
  }
  if (frames < 1 || pred.rows() % frames != 0) {
    throw Error(ErrorCode::kShapeMismatch, "loss: rows not a multiple of the window length");
  }
  const Eigen::Index joints = pred.cols() / 3;
  const Eigen::Index batch = pred.rows() / frames;
  LossResult<Scalar> out;
  out.grad = Matrix<Scalar>::Zero(pred.rows(), pred.cols());
  out.value.degenerate_velocity = frames < 2;
  const double re_scale = 1.0 / (static_cast<double>(frames) * joints * batch);
  const double v_scale = frames < 2 ? 0.0 : 1.0 / (static_cast<double>(frames - 1) * joints * batch);

  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Index base = b * frames;
    for (Eigen::Index t = 0; t < frames; ++t) {
      for (Eigen::Index j = 0; j < joints; ++j) {
        double d[3];
        double sq = 0.0;
        for (int a = 0; a < 3; ++a) {
          d[a] = static_cast<double>(pred(base + t, 3 * j + a)) - static_cast<double>(target(base + t, 3 * j + a));
          sq += d[a] * d[a];
        }
        const double norm = std::sqrt(sq);
        out.value.l_re += norm * re_scale;
        if (norm > 0.0) {
          for (int a = 0; a < 3; ++a) out.grad(base + t, 3 * j + a) += static_cast<Scalar>(re_scale * d[a] / norm);
        }
      }
    }
    for (Eigen::Index t = 0; t + 1 < frames; ++t) {
      for (Eigen::Index j = 0; j < joints; ++j) {
        double d[3];
        double sq = 0.0;
        for (int a = 0; a < 3; ++a) {
          const Eigen::Index c = 3 * j + a;
          const double vp = static_cast<double>(pred(base + t + 1, c)) - static_cast<double>(pred(base + t, c));
          const double vt = static_cast<double>(target(base + t + 1, c)) - static_cast<double>(target(base + t, c));
          d[a] = vp - vt;
          sq += d[a] * d[a];
        }
        const double norm = std::sqrt(sq);
        out.value.l_v += norm * v_scale;
        if (norm > 0.0) {
          for (int a = 0; a < 3; ++a) {
            const Scalar g = static_cast<Scalar>(v_scale * d[a] / norm);
            out.grad(base + t + 1, 3 * j + a) += g;
            out.grad(base + t, 3 * j + a) -= g;
          }
        }
      }
    }
  }
  out.value.total = out.value.l_re + out.value.l_v;
  return out;
}

template <typename Scalar>
LossResult<Scalar> loss(const Matrix<Scalar>& pred, const Matrix<Scalar>& target) {
  return loss(pred, target, pred.rows());
}

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

struct Schedule {
  double base_lr = 3e-4;
  double drop_lr = 6e-5;
  int drop_at = 30000;
  double decay = 0.85;
  int decay_every = 3000;
  int total = 80000;

  /// base_lr before drop_at; drop_lr * decay^floor((iter - drop_at) / decay_every) after.
  double lr_at(long long iter) const {
    if (iter < 0 || iter >= total) {
      throw Error(ErrorCode::kOutOfRange,
                  "lr_at: iteration " + std::to_string(iter) + " outside [0, " + std::to_string(total) + ")");
    }
    if (iter < drop_at) return base_lr;
    const long long steps = (iter - drop_at) / decay_every;
    return steps == 0 ? drop_lr : drop_lr * std::pow(decay, static_cast<double>(steps));
  }

  void validate() const {
    if (!(base_lr > 0) || !(drop_lr > 0) || !(decay > 0) || decay > 1 || decay_every < 1 || drop_at < 0 ||
        total < 1 || drop_lr > base_lr) {
      throw Error(ErrorCode::kInvalidArgument, "schedule must be positive and non-increasing");
    }
  }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename Scalar>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;
};

/// One bias-corrected Adam update. Nothing changes if any gradient is
/// non-finite.
template <typename Scalar>
void adam_step(const std::vector<Param<Scalar>*>& params, AdamState<Scalar>& state, double lr) {
  for (const Param<Scalar>* p : params) {
    if (!p->grad.allFinite()) throw Error(ErrorCode::kNonFiniteGradient, "adam_step: non-finite gradient");
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "adam_step: gradient shape differs from parameter");
    }
  }
  if (state.m.empty()) {
    for (const Param<Scalar>* p : params) {
      state.m.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorCode::kShapeMismatch, "adam_step: state size mismatch");
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<Scalar>& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (Scalar(1) - b1) * p.grad;
    v = b2 * v + (Scalar(1) - b2) * p.grad.cwiseProduct(p.grad);
    const auto step = static_cast<Scalar>(lr / c1);
    const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
    const auto eps = static_cast<Scalar>(state.eps);
    p.value.array() -= step * m.array() / ((v.array() * inv_c2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  double flip_prob = 0.5;
  double reverse_prob = 0.5;
  int flip_axis = 1;  // lateral coordinate of each joint triple

  void validate() const {
    if (flip_prob < 0 || flip_prob > 1 || reverse_prob < 0 || reverse_prob > 1) {
      throw Error(ErrorCode::kInvalidArgument, "augmentation probabilities must lie in [0, 1]");
    }
    if (flip_axis < 0 || flip_axis > 2) throw Error(ErrorCode::kInvalidArgument, "flip_axis must be 0, 1 or 2");
  }
};

template <typename Scalar>
void flip_axis(Matrix<Scalar>& frames, int axis) {
  for (Eigen::Index c = axis; c < frames.cols(); c += 3) frames.col(c) = -frames.col(c);
}

/// Reverses the concatenated (input, target) window in time and re-splits it.
template <typename Scalar>
void reverse_window(Matrix<Scalar>& input, Matrix<Scalar>& target) {
  Matrix<Scalar> all(input.rows() + target.rows(), input.cols());
  all << input, target;
  all = all.colwise().reverse().eval();
  input = all.topRows(input.rows());
  target = all.bottomRows(target.rows());
}

/// Draws both coins every call so the random stream does not depend on the
/// outcomes.
template <typename Scalar>
void augment(Matrix<Scalar>& input, Matrix<Scalar>& target, Rng& rng, const AugmentConfig& cfg) {
  const bool flip = bernoulli(rng, cfg.flip_prob);
  const bool reverse = bernoulli(rng, cfg.reverse_prob);
  if (flip) {
    flip_axis(input, cfg.flip_axis);
    flip_axis(target, cfg.flip_axis);
  }
  if (reverse) reverse_window(input, target);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  Schedule schedule;
  AugmentConfig augment;
  int iterations = 80000;
  int batch_size = 256;
  int log_every = 100;
  int checkpoint_every = 5000;
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    schedule.validate();
    augment.validate();
    if (iterations < 0 || iterations > schedule.total) {
      throw Error(ErrorCode::kInvalidArgument,
                  "iterations must lie in [0, " + std::to_string(schedule.total) + "]");
    }
    if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
    if (log_every < 1) throw Error(ErrorCode::kInvalidArgument, "log_every must be >= 1");
    if (checkpoint_every < 0) throw Error(ErrorCode::kInvalidArgument, "checkpoint_every must be >= 0");
  }
};

struct MetricRow {
  long long iteration = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

// Metrics log: tab-separated, one header line then one row per logged step.
//   iteration  lr  total  l_re  l_v
inline constexpr const char* kMetricsHeader = "iteration\tlr\ttotal\tl_re\tl_v";

inline std::string format_metric_row(const MetricRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld\t%.17g\t%.17g\t%.17g\t%.17g", r.iteration, r.lr, r.loss.total,
                r.loss.l_re, r.loss.l_v);
  return buf;
}

inline std::vector<MetricRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<MetricRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricRow r;
    std::istringstream fields(line);
    if (!(fields >> r.iteration >> r.lr >> r.loss.total >> r.loss.l_re >> r.loss.l_v)) {
      throw Error(ErrorCode::kInvalidArgument, "malformed metrics row: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

/// Batches of (input, target) windows drawn uniformly over every valid
/// (clip, start) pair.
template <typename Scalar>
class WindowSampler {
 public:
  WindowSampler(const std::vector<MotionClip>& clips, int input_frames, int output_frames)
      : clips_(&clips), input_frames_(input_frames), output_frames_(output_frames) {
    std::vector<std::size_t> all(clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) all[i] = i;
    index_ = WindowIndex::build(clips, all, input_frames + output_frames);
    if (index_.starts.empty()) {
      throw Error(ErrorCode::kClipTooShort, "no clip has " + std::to_string(input_frames + output_frames) +
                                                " frames for a training window");
    }
  }

  std::size_t window_count() const { return index_.starts.size(); }

  /// Fills stacked inputs ((B*T) x C) and targets ((B*dt) x C).
  void draw(Rng& rng, int batch, const AugmentConfig& aug, Matrix<Scalar>& inputs, Matrix<Scalar>& targets) const {
    const Eigen::Index c = (*clips_)[index_.starts.front().first].frames.cols();
    inputs.resize(static_cast<Eigen::Index>(batch) * input_frames_, c);
    targets.resize(static_cast<Eigen::Index>(batch) * output_frames_, c);
    for (int b = 0; b < batch; ++b) {
      const auto [clip, start] = index_.draw(rng);
      const auto& frames = (*clips_)[clip].frames;
      Matrix<Scalar> in = frames.middleRows(start, input_frames_).template cast<Scalar>();
      Matrix<Scalar> tg = frames.middleRows(start + input_frames_, output_frames_).template cast<Scalar>();
      augment(in, tg, rng, aug);
      inputs.middleRows(static_cast<Eigen::Index>(b) * input_frames_, input_frames_) = in;
      targets.middleRows(static_cast<Eigen::Index>(b) * output_frames_, output_frames_) = tg;
    }
  }

 private:
  const std::vector<MotionClip>* clips_;
  int input_frames_;
  int output_frames_;
  WindowIndex index_;
};

/// Loss and gradient for one stacked batch. Leaves parameter gradients
/// populated (zeroed first).
template <typename Scalar>
LossBreakdown loss_and_backward(const Network<Scalar>& net, const Matrix<Scalar>& inputs,
                                const Matrix<Scalar>& targets) {
  Tape<Scalar> tape;
  Var out{};
  try {
    out = forward(tape, net, tape.input(inputs));
  } catch (const Error& e) {
    // A non-finite activation trips the layer-norm guard before any loss
    // exists; report it as the loss it would have produced.
    if (e.code() != ErrorCode::kDivisionGuard) throw;
    LossBreakdown nan;
    nan.total = nan.l_re = nan.l_v = std::numeric_limits<double>::quiet_NaN();
    return nan;
  }
  const Matrix<Scalar> pred =
      add_last_frame(tape.value(out), inputs, net.config.input_frames, net.config.output_frames);
  LossResult<Scalar> l = loss(pred, targets, net.config.output_frames);
  if (!std::isfinite(l.value.total)) return l.value;
  net.zero_grad();
  // pred = residual + last frame, so d/d residual = d/d pred.
  tape.backward(out, l.grad);
  return l.value;
}

template <typename Scalar>
struct TrainResult {
  Network<Scalar> net;
  std::vector<MetricRow> log;
};

/// Runs the sample -> augment -> forward -> loss -> backward -> Adam loop.
/// With a non-empty out_dir, writes metrics.tsv and keeps out_dir/checkpoint
/// as the latest good state (initial, periodic, final).
template <typename Scalar>
TrainResult<Scalar> train(const std::vector<MotionClip>& clips, const TrainConfig& cfg,
                          const std::filesystem::path& out_dir = {},
                          const std::function<void(const MetricRow&)>& on_log = {}) {
  cfg.validate();
  for (const auto& clip : clips) {
    if (clip.joints() != cfg.model.joints) {
      throw Error(ErrorCode::kConfigMismatch, "clip '" + clip.subject + "' has " + std::to_string(clip.joints()) +
                                                  " joints, model expects " + std::to_string(cfg.model.joints));
    }
  }
  TrainResult<Scalar> result{build<Scalar>(cfg.model), {}};
  Network<Scalar>& net = result.net;
  const WindowSampler<Scalar> sampler(clips, cfg.model.input_frames, cfg.model.output_frames);
  const bool write = !out_dir.empty();
  std::ofstream metrics;
  if (write) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + out_dir.string() + ": " + ec.message());
    metrics.open(out_dir / "metrics.tsv", std::ios::trunc);
    if (!metrics) throw Error(ErrorCode::kIo, "cannot write " + (out_dir / "metrics.tsv").string());
    metrics << kMetricsHeader << '\n';
    save_checkpoint(net, 0, out_dir / "checkpoint");
  }
  Rng rng(cfg.seed);
  AdamState<Scalar> adam;
  const auto params = net.params();
  Matrix<Scalar> inputs, targets;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    sampler.draw(rng, cfg.batch_size, cfg.augment, inputs, targets);
    const double lr = cfg.schedule.lr_at(iter);
    const LossBreakdown l = loss_and_backward(net, inputs, targets);
    if (!std::isfinite(l.total)) {
      throw Error(ErrorCode::kNonFiniteLoss, "non-finite loss at iteration " + std::to_string(iter));
    }
    if (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations) {
      const MetricRow row{iter, lr, l};
      result.log.push_back(row);
      if (write) metrics << format_metric_row(row) << '\n' << std::flush;
      if (on_log) on_log(row);
    }
    adam_step(params, adam, lr);
    if (write && cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(net, static_cast<std::uint64_t>(iter + 1), out_dir / "checkpoint");
    }
  }
  if (write) save_checkpoint(net, static_cast<std::uint64_t>(cfg.iterations), out_dir / "checkpoint");
  return result;
}

}  // namespace haarmodic

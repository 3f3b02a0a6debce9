#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "haarmodic/data.hpp"
#include "haarmodic/diffcore.hpp"
#include "haarmodic/model.hpp"
#include "haarmodic/training.hpp"
#include "haarmodic/transforms.hpp"

namespace haarmodic {

// Property suites shared by `haarmodic selfcheck`, the unit tests and the
// acceptance binary.

enum class Precision { kFloat, kDouble };

inline const char* to_string(Precision p) { return p == Precision::kFloat ? "float" : "double"; }

/// Pass thresholds. Transform suites run in the chosen precision; gradient
/// checks always use double finite differences.
struct Thresholds {
  double transform;
  double gradient;

  static Thresholds for_precision(Precision p) {
    return p == Precision::kFloat ? Thresholds{1e-5, 1e-4} : Thresholds{1e-12, 1e-6};
  }
};

struct SuiteResult {
  std::string name;
  double max_error = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::string note;
};

inline SuiteResult finish(std::string name, double err, double threshold, std::string note = {}) {
  return {std::move(name), err, threshold, std::isfinite(err) && err < threshold, std::move(note)};
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> random_grid(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0, double hi = 1.0) {
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(uniform(rng, lo, hi));
  return m;
}

/// Even row count in [2, 128], column count in [1, 64].
template <typename Scalar>
SpectrumGrid<Scalar> random_spectrum_grid(Rng& rng) {
  const auto rows = static_cast<Eigen::Index>(2 * (1 + uniform_index(rng, 64)));
  const auto cols = static_cast<Eigen::Index>(1 + uniform_index(rng, 64));
  return SpectrumGrid<Scalar>{random_grid<Scalar>(rng, rows, cols), {}};
}

template <typename Scalar>
double haar_roundtrip_error(std::uint64_t seed, int grids) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < grids; ++i) {
    const auto g = random_spectrum_grid<Scalar>(rng);
    const auto back = haar_zoom_out(haar_zoom_in(g));
    if (back.data.rows() != g.data.rows() || back.data.cols() != g.data.cols()) return INFINITY;
    worst = std::max(worst, static_cast<double>((back.data - g.data).cwiseAbs().maxCoeff()));
  }
  return worst;
}

template <typename Scalar>
double parseval_error(std::uint64_t seed, int grids) {
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < grids; ++i) {
    const auto g = random_spectrum_grid<Scalar>(rng);
    const double before = g.data.template cast<double>().norm();
    const double after = haar_zoom_in(g).data.template cast<double>().norm();
    worst = std::max(worst, std::abs(after - before) / before);
  }
  return worst;
}

template <typename Scalar>
double dct_orthonormality_error(int n) {
  const Matrix<Scalar> d = dct_matrix<Scalar>(static_cast<std::size_t>(n));
  const Matrix<Scalar> eye = Matrix<Scalar>::Identity(n, n);
  // Infinity norm: max absolute row sum.
  return static_cast<double>((d * d.transpose() - eye).cwiseAbs().rowwise().sum().maxCoeff());
}

using Md = Matrix<double>;
using Builder = std::function<Var(Tape<double>&, Var)>;

/// Worst finite-difference error of sum(R .* f(x)) w.r.t. x and every listed
/// parameter, for a fixed random R.
inline double probe_error(Rng& rng, const Builder& build, const Md& x,
                          const std::vector<const Param<double>*>& params) {
  Md weights;
  {
    Tape<double> tape;
    const Var out = build(tape, tape.input(x));
    weights = random_grid<double>(rng, tape.value(out).rows(), tape.value(out).cols());
  }
  Md point = x;
  auto value = [&] {
    Tape<double> tape;
    const Var out = build(tape, tape.input(point));
    return (tape.value(out).array() * weights.array()).sum();
  };
  for (const auto* p : params) p->zero_grad();
  Tape<double> tape;
  const Var in = tape.input(x);
  const Var out = build(tape, in);
  tape.backward(out, weights);
  const Md input_grad = tape.grad(in);
  double worst = grad_check_inplace(value, point, input_grad);
  for (const auto* p : params) {
    auto& v = const_cast<Param<double>*>(p)->value;
    const Md analytic = p->grad;
    worst = std::max(worst, grad_check_inplace(value, v, analytic));
  }
  return worst;
}

inline void randomize(Rng& rng, AffineParams<double>& a) {
  a.weight.value = random_grid<double>(rng, a.out(), a.in());
  a.bias.value = random_grid<double>(rng, 1, a.out());
}

inline void randomize(Rng& rng, LayerNormParams<double>& ln) {
  ln.gain.value = random_grid<double>(rng, 1, ln.size(), 0.5, 1.5);
  ln.shift.value = random_grid<double>(rng, 1, ln.size());
}

}  // namespace detail

/// Windows of `batch` synthetic clips cut for `config`, stacked: inputs
/// (B*T) x C and targets (B*dt) x C.
inline void synthetic_batch(const ModelConfig& config, int batch, std::uint64_t seed, Matrix<double>& inputs,
                            Matrix<double>& targets) {
  SynthConfig sc;
  sc.clips = batch;
  sc.joints = config.joints;
  sc.frames = config.input_frames + config.output_frames;
  sc.seed = seed;
  const auto clips = synth_generate(sc);
  std::vector<Matrix<double>> in, tg;
  for (const auto& c : clips) {
    in.push_back(c.frames.topRows(config.input_frames).cast<double>());
    tg.push_back(c.frames.bottomRows(config.output_frames).cast<double>());
  }
  inputs = stack_rows(in);
  targets = stack_rows(tg);
}

/// Full-network finite-difference check of the training loss. fc_post and
/// the head bias are re-drawn first: at their zero init every upstream
/// gradient is exactly zero and the check would be vacuous.
inline double network_gradient_error(const ModelConfig& config, std::uint64_t seed, std::size_t coords_per_tensor = 3,
                                     int batch = 2) {
  Network<double> net = build<double>(config, seed);
  Rng rng(seed ^ 0x9E3779B97F4A7C15ull);
  const double post_scale = 1.0 / std::sqrt(static_cast<double>(config.channels()));
  net.fc_post.weight.value = detail::random_grid<double>(rng, net.fc_post.out(), net.fc_post.in(), -post_scale, post_scale);
  net.fc_post.bias.value = detail::random_grid<double>(rng, 1, net.fc_post.out(), -post_scale, post_scale);
  net.temporal_head.bias.value = detail::random_grid<double>(rng, 1, net.temporal_head.out(), -0.1, 0.1);

  Matrix<double> inputs, targets;
  synthetic_batch(config, batch, seed, inputs, targets);
  auto loss_of = [&](const Matrix<double>& in) {
    Tape<double> tape;
    const Var out = forward(tape, net, tape.input(in));
    const Matrix<double> pred = add_last_frame(tape.value(out), in, config.input_frames, config.output_frames);
    return loss(pred, targets, config.output_frames).value.total;
  };

  // Analytic gradients w.r.t. parameters and (through the residual path and
  // the last-frame skip) the input.
  net.zero_grad();
  Tape<double> tape;
  const Var in = tape.input(inputs);
  const Var out = forward(tape, net, in);
  const Matrix<double> pred = add_last_frame(tape.value(out), inputs, config.input_frames, config.output_frames);
  const LossResult<double> l = loss(pred, targets, config.output_frames);
  tape.backward(out, l.grad);
  Matrix<double> input_grad = tape.grad(in);
  for (Eigen::Index b = 0; b < inputs.rows() / config.input_frames; ++b) {
    input_grad.row((b + 1) * config.input_frames - 1) +=
        l.grad.middleRows(b * config.output_frames, config.output_frames).colwise().sum();
  }

  double worst = 0.0;
  Matrix<double> point = inputs;
  worst = std::max(worst, grad_check_inplace([&] { return loss_of(point); }, point, input_grad,
                                             sample_coords(rng, point.size(), 4 * coords_per_tensor)));
  net.for_each_param_mut([&](const std::string&, Param<double>& p) {
    const Matrix<double> analytic = p.grad;
    worst = std::max(worst, grad_check_inplace([&] { return loss_of(inputs); }, p.value, analytic,
                                               sample_coords(rng, p.value.size(), coords_per_tensor)));
  });
  return worst;
}

/// Finite-difference error of the loss gradient on a random pair.
inline double loss_gradient_error(std::uint64_t seed, int frames = 10, int joints = 4) {
  Rng rng(seed);
  const Matrix<double> target = detail::random_grid<double>(rng, frames, 3 * joints, -50, 50);
  const Matrix<double> pred = detail::random_grid<double>(rng, frames, 3 * joints, -50, 50);
  return grad_check(
      [&](const Matrix<double>& p) {
        const auto r = loss(p, target);
        return std::make_pair(r.value.total, r.grad);
      },
      pred);
}

inline SuiteResult haar_roundtrip_suite(Precision p, std::uint64_t seed = 1, int grids = 1000) {
  const double err = p == Precision::kFloat ? detail::haar_roundtrip_error<float>(seed, grids)
                                            : detail::haar_roundtrip_error<double>(seed, grids);
  return finish("haar-roundtrip", err, Thresholds::for_precision(p).transform,
                std::to_string(grids) + " grids, max abs error");
}

inline SuiteResult parseval_suite(Precision p, std::uint64_t seed = 1, int grids = 1000) {
  const double err = p == Precision::kFloat ? detail::parseval_error<float>(seed, grids)
                                            : detail::parseval_error<double>(seed, grids);
  return finish("parseval", err, Thresholds::for_precision(p).transform,
                std::to_string(grids) + " grids, max relative norm change");
}

inline SuiteResult dct_suite(Precision p) {
  double err = 0.0;
  for (int n : {10, 25, 50}) {
    err = std::max(err, p == Precision::kFloat ? detail::dct_orthonormality_error<float>(n)
                                               : detail::dct_orthonormality_error<double>(n));
  }
  return finish("dct-orthonormality", err, Thresholds::for_precision(p).transform, "n in {10, 25, 50}, inf-norm");
}

/// One result per differentiable op plus the loss and the full network, each
/// the worst over `seeds` seeds.
inline std::vector<SuiteResult> gradient_suite(double threshold, std::uint64_t seed = 1, int seeds = 5) {
  using detail::Md;
  struct Case {
    std::string name;
    std::function<double(Rng&)> run;
  };
  const std::vector<Case> cases = {
      {"grad-affine",
       [](Rng& rng) {
         AffineParams<double> a(5, 3);
         detail::randomize(rng, a);
         return detail::probe_error(rng, [&](Tape<double>& t, Var x) { return t.affine(x, a); },
                                    detail::random_grid<double>(rng, 4, 5), {&a.weight, &a.bias});
       }},
      {"grad-layer-norm",
       [](Rng& rng) {
         LayerNormParams<double> ln(6);
         detail::randomize(rng, ln);
         return detail::probe_error(rng, [&](Tape<double>& t, Var x) { return t.layer_norm(x, ln); },
                                    detail::random_grid<double>(rng, 4, 6), {&ln.gain, &ln.shift});
       }},
      {"grad-transpose",
       [](Rng& rng) {
         return detail::probe_error(rng, [](Tape<double>& t, Var x) { return t.transpose(x, 3); },
                                    detail::random_grid<double>(rng, 6, 4), {});
       }},
      {"grad-dct",
       [](Rng& rng) {
         const DctBasis<double> basis(5);
         return detail::probe_error(
             rng,
             [&](Tape<double>& t, Var x) {
               return t.fixed_linear(t.fixed_linear(x, FixedMap<double>::dct(basis)), FixedMap<double>::idct(basis));
             },
             detail::random_grid<double>(rng, 10, 3), {}) +
                detail::probe_error(
                    rng, [&](Tape<double>& t, Var x) { return t.fixed_linear(x, FixedMap<double>::dct(basis)); },
                    detail::random_grid<double>(rng, 10, 3), {});
       }},
      {"grad-haar",
       [](Rng& rng) {
         // Odd column count exercises the zero pad on the way in and the crop
         // on the way out.
         const auto x = detail::random_grid<double>(rng, 8, 7);
         const double in_err = detail::probe_error(
             rng, [](Tape<double>& t, Var v) { return t.fixed_linear(v, FixedMap<double>::haar_in(4)); }, x, {});
         const double out_err = detail::probe_error(
             rng, [](Tape<double>& t, Var v) { return t.fixed_linear(v, FixedMap<double>::haar_out(8, 1)); },
             detail::random_grid<double>(rng, 16, 4), {});
         return std::max(in_err, out_err);
       }},
      {"grad-add-slice",
       [](Rng& rng) {
         return detail::probe_error(
             rng, [](Tape<double>& t, Var x) { return t.add(t.slice_rows(x, 0, 2), t.slice_rows(x, 2, 2)); },
             detail::random_grid<double>(rng, 4, 3), {});
       }},
      {"grad-mr-haar-block",
       [](Rng& rng) {
         ModelConfig cfg;
         cfg.input_frames = 7;
         cfg.joints = 2;
         cfg.levels = 3;
         cfg.fc_per_level = {2, 2, 1};
         cfg.blocks = 1;
         cfg.seed = rng();
         const Network<double> net = build<double>(cfg);
         std::vector<const Param<double>*> params;
         net.for_each_param([&](const std::string& name, const Param<double>& p) {
           if (name.rfind("block0.", 0) == 0) params.push_back(&p);
         });
         return detail::probe_error(
             rng, [&](Tape<double>& t, Var x) { return mr_haar_block(t, x, net.blocks[0], cfg); },
             detail::random_grid<double>(rng, 2 * cfg.channels(), cfg.input_frames), params);
       }},
      {"grad-loss", [](Rng& rng) { return loss_gradient_error(rng()); }},
      {"grad-network", [](Rng& rng) { return network_gradient_error(ModelConfig{}, rng()); }},
  };
  std::vector<SuiteResult> out;
  for (const auto& c : cases) {
    Rng rng(seed);
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) worst = std::max(worst, c.run(rng));
    out.push_back(finish(c.name, worst, threshold, std::to_string(seeds) + " seeds, max relative error"));
  }
  return out;
}

/// Layer norm on unit-variance rows. With `inject_zero_variance` one row is
/// constant and eps is 0, so the division guard must trip and the suite
/// reports failure.
inline SuiteResult layer_norm_guard_suite(bool inject_zero_variance) {
  LayerNormParams<double> ln(4, inject_zero_variance ? 0.0 : 1e-5);
  Matrix<double> x(2, 4);
  x << -1, 1, -1, 1, 2, 0, 2, 0;
  if (inject_zero_variance) x.row(1).setConstant(3.0);
  try {
    Tape<double> tape;
    const Var y = tape.layer_norm(tape.input(x), ln);
    const double err = (tape.value(y).rowwise().mean()).cwiseAbs().maxCoeff();
    return finish("layer-norm-guard", err, 1e-9, "row means after normalization");
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDivisionGuard) throw;
    return {"layer-norm-guard", INFINITY, 0.0, false, std::string("division guard: ") + e.what()};
  }
}

struct SelfcheckOptions {
  Precision precision = Precision::kFloat;
  std::uint64_t seed = 1;
  int grids = 1000;
  int gradient_seeds = 5;
  bool inject_zero_variance = false;
};

inline std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& opt) {
  const Thresholds th = Thresholds::for_precision(opt.precision);
  std::vector<SuiteResult> out = {haar_roundtrip_suite(opt.precision, opt.seed, opt.grids),
                                  parseval_suite(opt.precision, opt.seed, opt.grids), dct_suite(opt.precision)};
  for (auto& r : gradient_suite(th.gradient, opt.seed, opt.gradient_seeds)) out.push_back(std::move(r));
  out.push_back(layer_norm_guard_suite(opt.inject_zero_variance));
  return out;
}

}  // namespace haarmodic

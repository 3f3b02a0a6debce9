#include <gtest/gtest.h>

#include <set>

#include "haarmodic/data.hpp"
#include "haarmodic/model.hpp"
#include "haarmodic/selfcheck.hpp"

using namespace haarmodic;
using Md = Matrix<double>;
using Mf = Matrix<float>;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_frames = 12;
  cfg.output_frames = 4;
  cfg.joints = 2;
  cfg.blocks = 2;
  cfg.levels = 3;
  cfg.fc_per_level = {2, 2, 1};
  return cfg;
}

std::vector<Md> synthetic_windows(const ModelConfig& cfg, int n, std::uint64_t seed) {
  SynthConfig sc;
  sc.clips = n;
  sc.joints = cfg.joints;
  sc.frames = cfg.input_frames;
  sc.seed = seed;
  std::vector<Md> out;
  for (const auto& c : synth_generate(sc)) out.push_back(c.frames.cast<double>());
  return out;
}

}  // namespace

TEST(ModelConfig, DefaultsValidate) {
  ModelConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.channels(), 66);
  EXPECT_EQ(cfg.level_cols(), (std::vector<int>{50, 25, 13}));
  EXPECT_EQ(cfg.level_rows(), (std::vector<int>{66, 132, 264}));
}

TEST(ModelConfig, FourLevelLadderShapes) {
  ModelConfig cfg;
  cfg.levels = 4;
  cfg.fc_per_level = {4, 2, 1, 1};
  EXPECT_EQ(cfg.level_cols(), (std::vector<int>{50, 25, 13, 7}));
  EXPECT_EQ(cfg.level_rows(), (std::vector<int>{66, 132, 264, 528}));
}

TEST(ModelConfig, RejectsBadValues) {
  auto expect_invalid = [](ModelConfig cfg) {
    try {
      cfg.validate();
      FAIL() << "expected an error";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    }
  };
  ModelConfig c;
  c.levels = 2;  // ladder still has 3 entries
  expect_invalid(c);
  c = ModelConfig{};
  c.fc_per_level = {4, 0, 1};
  expect_invalid(c);
  c = ModelConfig{};
  c.joints = 1;  // 3 channels cannot be halved
  expect_invalid(c);
  c.levels = 1;
  c.fc_per_level = {2};
  EXPECT_NO_THROW(c.validate());
  c = ModelConfig{};
  c.output_frames = 0;
  expect_invalid(c);
}

TEST(Build, ParameterLayout) {
  const auto net = build<double>(ModelConfig{});
  std::vector<std::string> names;
  net.for_each_param([&](const std::string& n, const Param<double>&) { names.push_back(n); });
  // fc_pre + 4 blocks x (7 ladder + merge) FC blocks x 4 tensors + fc_post + head
  EXPECT_EQ(names.size(), 2u + 4u * 8u * 4u + 2u + 2u);
  EXPECT_EQ(names.front(), "fc_pre.weight");
  EXPECT_EQ(names[2], "block0.level0.fc0.weight");
  EXPECT_EQ(names.back(), "head.bias");
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
  EXPECT_EQ(net.blocks[0].levels[1][0].affine.in(), 25);
  EXPECT_EQ(net.blocks[0].levels[2][0].affine.in(), 13);
  EXPECT_EQ(net.temporal_head.in(), 50);
  EXPECT_EQ(net.temporal_head.out(), 10);
}

TEST(Build, NoLayerNormDropsTensors) {
  ModelConfig cfg;
  cfg.use_ln = false;
  const auto net = build<double>(cfg);
  std::size_t count = 0;
  net.for_each_param([&](const std::string& n, const Param<double>&) {
    EXPECT_EQ(n.find(".ln."), std::string::npos) << n;
    ++count;
  });
  EXPECT_EQ(count, 2u + 4u * 8u * 2u + 4u);
}

TEST(Build, DeterministicPerSeed) {
  const auto a = build<double>(ModelConfig{}, 3);
  const auto b = build<double>(ModelConfig{}, 3);
  const auto c = build<double>(ModelConfig{}, 4);
  EXPECT_EQ(a.fc_pre.weight.value, b.fc_pre.weight.value);
  EXPECT_EQ(a.blocks[3].merge.affine.bias.value, b.blocks[3].merge.affine.bias.value);
  EXPECT_NE(a.fc_pre.weight.value, c.fc_pre.weight.value);
}

TEST(Build, InitRanges) {
  const auto net = build<double>(ModelConfig{}, 11);
  EXPECT_TRUE(net.fc_post.weight.value.isZero(0.0));
  EXPECT_TRUE(net.fc_post.bias.value.isZero(0.0));
  EXPECT_TRUE(net.temporal_head.bias.value.isZero(0.0));
  const double bound = 1.0 / std::sqrt(66.0);
  EXPECT_LE(net.fc_pre.weight.value.cwiseAbs().maxCoeff(), bound);
  EXPECT_GT(net.fc_pre.weight.value.cwiseAbs().maxCoeff(), 0.5 * bound);
  EXPECT_LE(net.temporal_head.weight.value.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(50.0));
  EXPECT_TRUE((net.blocks[0].levels[0][0].ln.gain.value.array() == 1.0).all());
}

TEST(Forward, OutputShapeForBatch) {
  const auto cfg = small_config();
  const auto net = build<double>(cfg, 1);
  const auto windows = synthetic_windows(cfg, 3, 5);
  EXPECT_EQ(forward_stacked(net, stack_rows(windows)).rows(), 12);
  EXPECT_EQ(forward_stacked(net, stack_rows(windows)).cols(), 6);
  EXPECT_THROW(forward(net, Md(Md::Zero(11, 6))), Error);
  EXPECT_THROW(forward(net, Md(Md::Zero(12, 5))), Error);
}

TEST(Forward, BatchedEqualsPerSample) {
  auto cfg = small_config();
  auto net = build<double>(cfg, 2);
  net.fc_post.weight.value.setConstant(0.01);
  const auto windows = synthetic_windows(cfg, 3, 6);
  const Md stacked = predict_stacked(net, stack_rows(windows));
  for (int b = 0; b < 3; ++b) {
    const Md single = predict(net, windows[static_cast<std::size_t>(b)]);
    EXPECT_LT((stacked.middleRows(4 * b, 4) - single).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Forward, FreshNetworkRepeatsLastFrame) {
  for (bool dct : {true, false}) {
    ModelConfig cfg;
    cfg.use_dct = dct;
    const auto net = build<float>(cfg, 9);
    SynthConfig sc;
    sc.clips = 2;
    sc.frames = 50;
    for (const auto& clip : synth_generate(sc)) {
      EXPECT_EQ(predict(net, clip.frames), zero_velocity_baseline(clip.frames, 10));
    }
  }
}

TEST(Forward, WorksWithoutBlocksOrLevels) {
  ModelConfig cfg = small_config();
  cfg.blocks = 0;
  EXPECT_EQ(forward(build<double>(cfg), synthetic_windows(cfg, 1, 1)[0]).rows(), 4);
  cfg.blocks = 1;
  cfg.levels = 1;
  cfg.fc_per_level = {3};
  EXPECT_EQ(forward(build<double>(cfg), synthetic_windows(cfg, 1, 1)[0]).rows(), 4);
}

TEST(MRHaarBlock, ZeroMergeIsIdentity) {
  const auto cfg = small_config();
  auto net = build<double>(cfg, 4);
  auto& merge = net.blocks[0].merge;
  merge.ln.gain.value.setZero();
  merge.ln.shift.value.setZero();
  Rng rng(1);
  const Md x = detail::random_grid<double>(rng, 2 * cfg.channels(), cfg.input_frames);
  Tape<double> tape;
  EXPECT_EQ(tape.value(mr_haar_block(tape, tape.input(x), net.blocks[0], cfg)), x);
}

TEST(MRHaarBlock, ZeroedFcBlocksGiveIdentity) {
  const auto cfg = small_config();
  auto net = build<double>(cfg, 5);
  auto zero = [](FCBlockParams<double>& fc) {
    fc.affine.weight.value.setZero();
    fc.affine.bias.value.setZero();
    fc.ln.gain.value.setZero();
    fc.ln.shift.value.setZero();
  };
  for (auto& level : net.blocks[1].levels) {
    for (auto& fc : level) zero(fc);
  }
  zero(net.blocks[1].merge);
  Rng rng(3);
  const Md x = detail::random_grid<double>(rng, 2 * cfg.channels(), cfg.input_frames);
  Tape<double> tape;
  EXPECT_EQ(tape.value(mr_haar_block(tape, tape.input(x), net.blocks[1], cfg)), x);
  // The other block is untouched and still moves its input.
  Tape<double> t2;
  EXPECT_NE(t2.value(mr_haar_block(t2, t2.input(x), net.blocks[0], cfg)), x);
}

TEST(Forward, FreshNetworkOutputsZeroResidual) {
  const auto net = build<double>(ModelConfig{}, 2);
  SynthConfig sc;
  sc.clips = 1;
  sc.frames = 50;
  const Md w = synth_generate(sc)[0].frames.cast<double>();
  EXPECT_TRUE(forward(net, w).isZero(0.0));
}

TEST(MRHaarBlock, PreservesShapeWithOddColumns) {
  auto cfg = small_config();
  cfg.input_frames = 11;  // 11 -> 6 -> 3
  const auto net = build<double>(cfg, 4);
  Rng rng(2);
  const Md x = detail::random_grid<double>(rng, 3 * cfg.channels(), 11);
  Tape<double> tape;
  const Md y = tape.value(mr_haar_block(tape, tape.input(x), net.blocks[1], cfg));
  EXPECT_EQ(y.rows(), x.rows());
  EXPECT_EQ(y.cols(), 11);
  EXPECT_TRUE(y.allFinite());
}

TEST(Gradients, FullNetworkFiniteDifference) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    EXPECT_LT(network_gradient_error(ModelConfig{}, seed, 2), 1e-4) << "seed " << seed;
  }
}

TEST(Gradients, SmallConfigAblations) {
  for (bool dct : {true, false}) {
    for (bool ln : {true, false}) {
      auto cfg = small_config();
      cfg.use_dct = dct;
      cfg.use_ln = ln;
      EXPECT_LT(network_gradient_error(cfg, 7, 4), 1e-5) << dct << ln;
    }
  }
}

TEST(Gradients, FlowReachesEveryTensorOnceFcPostIsNonzero) {
  auto net = build<double>(small_config(), 3);
  Md inputs, targets;
  synthetic_batch(net.config, 2, 3, inputs, targets);
  auto count_nonzero = [&] {
    net.zero_grad();
    Tape<double> tape;
    const Var out = forward(tape, net, tape.input(inputs));
    const Md pred = add_last_frame(tape.value(out), inputs, 12, 4);
    tape.backward(out, loss(pred, targets, 4).grad);
    std::vector<std::string> dead;
    net.for_each_param([&](const std::string& n, const Param<double>& p) {
      if (p.grad.isZero(0.0)) dead.push_back(n);
    });
    return dead;
  };
  // At init only the tensors at or downstream of fc_post receive gradient.
  const auto dead_at_init = count_nonzero();
  EXPECT_EQ(std::count(dead_at_init.begin(), dead_at_init.end(), "fc_post.weight"), 0);
  EXPECT_EQ(std::count(dead_at_init.begin(), dead_at_init.end(), "fc_pre.weight"), 1);
  net.fc_post.weight.value.setConstant(0.05);
  const auto dead = count_nonzero();
  EXPECT_TRUE(dead.empty()) << dead.front();
}

TEST(Rollout, ExtendsBeyondOutputFrames) {
  auto cfg = small_config();
  auto net = build<double>(cfg, 1);
  const auto w = synthetic_windows(cfg, 1, 2)[0];
  const Md r = rollout(net, w, 9);
  EXPECT_EQ(r.rows(), 9);
  EXPECT_EQ(r, zero_velocity_baseline(w, 9));
  net.fc_post.bias.value.setConstant(1.0);
  const Md r2 = rollout(net, w, 9);
  EXPECT_EQ(r2.topRows(4), predict(net, w));
  EXPECT_THROW(rollout(net, w, 0), Error);
}

TEST(Baseline, RepeatsLastRow) {
  Md w(3, 3);
  w << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  const Md b = zero_velocity_baseline(w, 2);
  EXPECT_EQ(b.rows(), 2);
  EXPECT_EQ(b.row(0), w.row(2));
  EXPECT_EQ(b.row(1), w.row(2));
}

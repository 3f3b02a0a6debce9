#include <gtest/gtest.h>

#include <filesystem>

#include "haarmodic/selfcheck.hpp"
#include "haarmodic/training.hpp"

using namespace haarmodic;
using Md = Matrix<double>;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.input_frames = 10;
  cfg.output_frames = 4;
  cfg.joints = 2;
  cfg.blocks = 1;
  cfg.levels = 2;
  cfg.fc_per_level = {2, 1};
  return cfg;
}

TrainConfig tiny_train(int iterations) {
  TrainConfig tc;
  tc.model = tiny_model();
  tc.iterations = iterations;
  tc.batch_size = 4;
  tc.log_every = 5;
  tc.checkpoint_every = 10;
  tc.seed = 3;
  return tc;
}

std::vector<MotionClip> tiny_clips() {
  SynthConfig sc;
  sc.clips = 4;
  sc.joints = 2;
  sc.frames = 40;
  sc.seed = 2;
  return synth_generate(sc);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("haarmodic_test_train_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Loss, ZeroWhenEqual) {
  Rng rng(1);
  const Md p = detail::random_grid<double>(rng, 5, 6);
  const auto l = loss(p, p);
  EXPECT_EQ(l.value.total, 0.0);
  EXPECT_TRUE(l.grad.isZero(0.0));
}

TEST(Loss, PythagoreanSingleFrame) {
  Md p(1, 3), t = Md::Zero(1, 3);
  p << 3, 4, 0;
  const auto l = loss(p, t);
  EXPECT_EQ(l.value.l_re, 5.0);
  EXPECT_EQ(l.value.l_v, 0.0);
  EXPECT_TRUE(l.value.degenerate_velocity);
  EXPECT_DOUBLE_EQ(l.grad(0, 0), 0.6);
}

TEST(Loss, VelocityTermHandExample) {
  // One joint, pred moves (3,4,0) between frames while the target stays put.
  Md p = Md::Zero(2, 3), t = Md::Zero(2, 3);
  p.row(1) << 3, 4, 0;
  const auto l = loss(p, t);
  EXPECT_DOUBLE_EQ(l.value.l_re, 2.5);
  EXPECT_DOUBLE_EQ(l.value.l_v, 5.0);
  EXPECT_DOUBLE_EQ(l.value.total, 7.5);
  EXPECT_FALSE(l.value.degenerate_velocity);
}

TEST(Loss, MeanOverJointsAndBatch) {
  Md p = Md::Zero(2, 6), t = Md::Zero(2, 6);
  p.row(0) << 3, 4, 0, 0, 0, 0;
  p.row(1) << 3, 4, 0, 0, 0, 0;
  // Two windows of one frame: each has l_re = (5 + 0) / 2.
  EXPECT_DOUBLE_EQ(loss(p, t, 1).value.l_re, 2.5);
  EXPECT_THROW(loss(p, t, 3), Error);
  EXPECT_THROW(loss(p, Md(Md::Zero(2, 3))), Error);
  EXPECT_THROW(loss(Md(Md::Zero(2, 4)), Md(Md::Zero(2, 4))), Error);
}

TEST(Loss, FiniteDifferenceOverSeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) EXPECT_LT(loss_gradient_error(seed), 1e-5);
}

TEST(Loss, TotalIsSumOfTerms) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Md p = detail::random_grid<double>(rng, 8, 9), t = detail::random_grid<double>(rng, 8, 9);
    const auto l = loss(p, t, 4);
    EXPECT_EQ(l.value.total, l.value.l_re + l.value.l_v);
    EXPECT_GE(l.value.l_v, 0.0);
  }
}

TEST(Schedule, Anchors) {
  const Schedule s;
  EXPECT_EQ(s.lr_at(0), 3e-4);
  EXPECT_EQ(s.lr_at(29999), 3e-4);
  EXPECT_EQ(s.lr_at(30000), 6e-5);
  EXPECT_EQ(s.lr_at(32999), 6e-5);
  EXPECT_EQ(s.lr_at(33000), 5.1e-5);
  EXPECT_THROW(s.lr_at(-1), Error);
  EXPECT_THROW(s.lr_at(80000), Error);
}

TEST(Schedule, NonIncreasingAndPositive) {
  const Schedule s;
  double prev = s.lr_at(0);
  for (int it = 1; it < s.total; it += 97) {
    const double lr = s.lr_at(it);
    EXPECT_GT(lr, 0.0);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Adam, ZeroGradientLeavesParams) {
  Param<double> p(2, 2);
  p.value << 1, 2, 3, 4;
  const Md before = p.value;
  AdamState<double> st;
  adam_step<double>({&p}, st, 1e-3);
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepClosedForm) {
  Param<double> p(1, 1);
  p.grad(0, 0) = 1.0;
  AdamState<double> st;
  adam_step<double>({&p}, st, 1e-3);
  EXPECT_NEAR(p.value(0, 0), -1e-3 / (1.0 + 1e-8), 1e-18);
}

TEST(Adam, NonFiniteGradientAbortsWithoutChange) {
  Param<double> a(1, 2), b(1, 1);
  a.grad.setConstant(1.0);
  b.grad(0, 0) = std::numeric_limits<double>::infinity();
  AdamState<double> st;
  try {
    adam_step<double>({&a, &b}, st, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteGradient);
  }
  EXPECT_TRUE(a.value.isZero(0.0));
  EXPECT_EQ(st.step, 0);
  EXPECT_TRUE(st.m.empty());
}

TEST(Augment, OffIsIdentity) {
  Rng rng(1);
  Md in = detail::random_grid<double>(rng, 5, 6), tg = detail::random_grid<double>(rng, 2, 6);
  const Md in0 = in, tg0 = tg;
  augment(in, tg, rng, AugmentConfig{0.0, 0.0, 1});
  EXPECT_EQ(in, in0);
  EXPECT_EQ(tg, tg0);
}

TEST(Augment, FlipNegatesLateralAxisAndIsInvolution) {
  Rng rng(1);
  Md in = detail::random_grid<double>(rng, 5, 6), tg = detail::random_grid<double>(rng, 2, 6);
  const Md in0 = in, tg0 = tg;
  const AugmentConfig flip{1.0, 0.0, 1};
  augment(in, tg, rng, flip);
  EXPECT_EQ(in.col(1), Md(-in0.col(1)));
  EXPECT_EQ(in.col(4), Md(-in0.col(4)));
  EXPECT_EQ(in.col(0), in0.col(0));
  EXPECT_EQ(tg.col(4), Md(-tg0.col(4)));
  augment(in, tg, rng, flip);
  EXPECT_EQ(in, in0);
  EXPECT_EQ(tg, tg0);
}

TEST(Augment, ReverseResplitsWindow) {
  Md in(50, 3), tg(10, 3);
  for (int f = 0; f < 50; ++f) in.row(f).setConstant(f);
  for (int f = 0; f < 10; ++f) tg.row(f).setConstant(50 + f);
  Rng rng(1);
  augment(in, tg, rng, AugmentConfig{0.0, 1.0, 1});
  EXPECT_EQ(in(0, 0), 59);
  EXPECT_EQ(in(49, 0), 10);
  EXPECT_EQ(tg(0, 0), 9);
  EXPECT_EQ(tg(9, 0), 0);
}

TEST(Augment, PreservesJointPairDistances) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Md in = detail::random_grid<double>(rng, 6, 9), tg = detail::random_grid<double>(rng, 3, 9);
    auto dists = [](const Md& a, const Md& b) {
      std::vector<double> out;
      Md all(a.rows() + b.rows(), a.cols());
      all << a, b;
      for (Eigen::Index f = 0; f < all.rows(); ++f) {
        out.push_back((all.row(f).segment(0, 3) - all.row(f).segment(6, 3)).norm());
      }
      std::sort(out.begin(), out.end());
      return out;
    };
    const auto before = dists(in, tg);
    augment(in, tg, rng, AugmentConfig{});
    const auto after = dists(in, tg);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i], after[i], 1e-12);
  }
}

TEST(Augment, StreamIndependentOfOutcome) {
  Rng a(9), b(9);
  Md x = Md::Zero(4, 3), y = Md::Zero(2, 3);
  augment(x, y, a, AugmentConfig{1.0, 1.0, 1});
  augment(x, y, b, AugmentConfig{0.0, 0.0, 1});
  EXPECT_EQ(a(), b());
}

TEST(Train, InitialLossEqualsBaselineLoss) {
  const auto clips = tiny_clips();
  auto tc = tiny_train(1);
  tc.augment = AugmentConfig{0.0, 0.0, 1};
  const auto res = train<double>(clips, tc);
  ASSERT_EQ(res.log.size(), 1u);
  // Replay the first batch and score the zero-velocity baseline on it.
  const WindowSampler<double> sampler(clips, 10, 4);
  Rng rng(tc.seed);
  Md in, tg;
  sampler.draw(rng, tc.batch_size, tc.augment, in, tg);
  const Md base = add_last_frame(Md(Md::Zero(tg.rows(), tg.cols())), in, 10, 4);
  EXPECT_EQ(res.log[0].loss.total, loss(base, tg, 4).value.total);
}

TEST(Train, ZeroIterationsKeepsFreshBuild) {
  const fs::path dir = scratch_dir("zero");
  const auto res = train<double>(tiny_clips(), tiny_train(0), dir);
  EXPECT_TRUE(res.log.empty());
  const auto loaded = load_checkpoint<double>(dir / "checkpoint");
  const auto fresh = build<double>(tiny_model());
  EXPECT_EQ(loaded.fc_pre.weight.value, fresh.fc_pre.weight.value);
  EXPECT_EQ(loaded.blocks[0].merge.affine.weight.value, fresh.blocks[0].merge.affine.weight.value);
  EXPECT_TRUE(fs::exists(dir / "metrics.tsv"));
}

TEST(Train, LogsAndCheckpoints) {
  const fs::path dir = scratch_dir("log");
  const auto res = train<double>(tiny_clips(), tiny_train(12), dir);
  const auto rows = read_metrics(dir / "metrics.tsv");
  ASSERT_EQ(rows.size(), 4u);  // 0, 5, 10, 11
  EXPECT_EQ(rows[0].iteration, 0);
  EXPECT_EQ(rows[3].iteration, 11);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].loss.total, res.log[i].loss.total);
    EXPECT_EQ(rows[i].loss.total, rows[i].loss.l_re + rows[i].loss.l_v);
    EXPECT_EQ(rows[i].lr, 3e-4);
  }
  std::uint64_t it = 0;
  const auto net = load_checkpoint<double>(dir / "checkpoint", &it);
  EXPECT_EQ(it, 12u);
  EXPECT_EQ(net.fc_post.weight.value, res.net.fc_post.weight.value);
}

TEST(Train, DeterministicGivenSeed) {
  auto tc = tiny_train(15);
  const auto a = train<double>(tiny_clips(), tc);
  const auto b = train<double>(tiny_clips(), tc);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss.total, b.log[i].loss.total);
  EXPECT_EQ(a.net.fc_pre.weight.value, b.net.fc_pre.weight.value);
  tc.seed = 4;
  EXPECT_NE(train<double>(tiny_clips(), tc).log.back().loss.total, a.log.back().loss.total);
}

TEST(Train, LossDecreasesOnTinySet) {
  // One window per clip, so the batch is the whole set and can be memorized.
  SynthConfig sc;
  sc.clips = 4;
  sc.joints = 2;
  sc.frames = 14;
  sc.seed = 2;
  auto tc = tiny_train(300);
  tc.log_every = 299;
  // Outputs are in mm while Adam moves each weight by about lr per step.
  tc.schedule.base_lr = 1e-2;
  tc.schedule.drop_lr = 1e-3;
  tc.augment = AugmentConfig{0.0, 0.0, 1};
  const auto res = train<float>(synth_generate(sc), tc);
  EXPECT_LT(res.log.back().loss.l_re, 0.2 * res.log.front().loss.l_re);
}

TEST(Train, NonFiniteLossKeepsLastCheckpoint) {
  const fs::path dir = scratch_dir("nan");
  auto clips = tiny_clips();
  for (auto& c : clips) c.frames.col(0).setConstant(std::numeric_limits<float>::infinity());
  try {
    train<double>(clips, tiny_train(5), dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteLoss);
  }
  std::uint64_t it = 99;
  load_checkpoint<double>(dir / "checkpoint", &it);
  EXPECT_EQ(it, 0u);
}

TEST(Train, RejectsBadInputs) {
  auto clips = tiny_clips();
  auto tc = tiny_train(1);
  tc.model.joints = 4;
  try {
    train<double>(clips, tc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigMismatch);
  }
  tc = tiny_train(1);
  for (auto& c : clips) c.frames.conservativeResize(13, Eigen::NoChange);
  try {
    train<double>(clips, tc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kClipTooShort);
  }
  tc.batch_size = 0;
  EXPECT_THROW(train<double>(tiny_clips(), tc), Error);
}

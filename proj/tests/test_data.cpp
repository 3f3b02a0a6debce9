#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "haarmodic/data.hpp"

using namespace haarmodic;
namespace fs = std::filesystem;

namespace {

MotionClip make_clip(int frames, int joints, float value = 0.0f) {
  MotionClip c;
  c.action = "walking";
  c.subject = "S1";
  c.frames = Matrix<float>::Constant(frames, 3 * joints, value);
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("haarmodic_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ErrorCode decode_error(const std::string& bytes) {
  try {
    decode_clip(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(Motb, HeaderLayout) {
  MotionClip c = make_clip(2, 1, 1.5f);
  c.action = "ab";
  c.subject = "S";
  const std::string b = encode_clip(c);
  ASSERT_EQ(b.size(), 8u + 5 * 4 + 2 + 1 + 2 * 3 * 4);
  EXPECT_EQ(b.substr(0, 8), "MOTB0001");
  auto u32 = [&](std::size_t at) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
  };
  EXPECT_EQ(u32(8), 1u);    // K
  EXPECT_EQ(u32(12), 25u);  // fps
  EXPECT_EQ(u32(16), 2u);   // F
  EXPECT_EQ(u32(20), 2u);   // action length
  EXPECT_EQ(u32(24), 1u);   // subject length
  EXPECT_EQ(b.substr(28, 3), "abS");
  EXPECT_EQ(u32(31), 0x3FC00000u);  // 1.5f
}

TEST(Motb, RoundTripIsBitIdentical) {
  SynthConfig sc;
  sc.clips = 1;
  sc.frames = 60;
  const MotionClip c = synth_generate(sc)[0];
  const fs::path dir = scratch_dir("roundtrip");
  write_clip(c, dir / "a.motb");
  const MotionClip back = read_clip(dir / "a.motb");
  EXPECT_EQ(back, c);
  EXPECT_EQ(std::memcmp(back.frames.data(), c.frames.data(), sizeof(float) * c.frames.size()), 0);
  EXPECT_EQ(encode_clip(back), encode_clip(c));
}

TEST(Motb, DecodeErrors) {
  const std::string good = encode_clip(make_clip(3, 2, 1.0f));
  std::string bad_magic = good;
  bad_magic[7] = '2';
  EXPECT_EQ(decode_error(bad_magic), ErrorCode::kBadMagic);
  EXPECT_EQ(decode_error(good.substr(0, 10)), ErrorCode::kTruncated);
  EXPECT_EQ(decode_error(good.substr(0, good.size() - 1)), ErrorCode::kTruncated);
  EXPECT_EQ(decode_error(good + "x"), ErrorCode::kSizeMismatch);
  std::string nan = good;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(&nan[nan.size() - 4], &q, 4);
  EXPECT_EQ(decode_error(nan), ErrorCode::kNonFiniteData);
  std::string zero_k = good;
  zero_k[8] = 0;
  EXPECT_EQ(decode_error(zero_k), ErrorCode::kSizeMismatch);
}

TEST(Motb, DirectoryReadIsSortedAndChecksExistence) {
  const fs::path dir = scratch_dir("dir");
  MotionClip a = make_clip(4, 1, 1.0f), b = make_clip(4, 1, 2.0f);
  write_clip(b, dir / "b.motb");
  write_clip(a, dir / "a.motb");
  const auto clips = read_clip_dir(dir);
  ASSERT_EQ(clips.size(), 2u);
  EXPECT_EQ(clips[0], a);
  try {
    read_clip_dir(dir / "missing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingDataset);
  }
}

TEST(Synth, DeterministicAndLabelled) {
  SynthConfig sc;
  sc.clips = 17;
  sc.frames = 80;
  sc.seed = 7;
  const auto a = synth_generate(sc);
  const auto b = synth_generate(sc);
  ASSERT_EQ(a.size(), 17u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0].action, synthetic_action_names()[0]);
  EXPECT_EQ(a[15].action, synthetic_action_names()[0]);
  sc.seed = 8;
  EXPECT_NE(synth_generate(sc)[0].frames, a[0].frames);
  for (const auto& c : a) {
    EXPECT_EQ(c.frames.rows(), 80);
    EXPECT_EQ(c.frames.cols(), 66);
    EXPECT_TRUE(c.frames.allFinite());
    // Offset within +-400 mm plus at most four waves of 150 mm.
    EXPECT_LE(c.frames.cwiseAbs().maxCoeff(), 400.0f + 4 * 150.0f);
  }
  sc.clips = 0;
  EXPECT_TRUE(synth_generate(sc).empty());
}

TEST(Synth, MotionIsNotStatic) {
  SynthConfig sc;
  sc.clips = 2;
  const auto clips = synth_generate(sc);
  for (const auto& c : clips) {
    const Matrix<float> diff = c.frames.bottomRows(c.frames.rows() - 1) - c.frames.topRows(c.frames.rows() - 1);
    EXPECT_GT(diff.cwiseAbs().maxCoeff(), 1.0f);
  }
}

TEST(Protocol, HorizonTable) {
  EXPECT_EQ(eval_offsets(), (std::vector<int>{2, 4, 8, 10, 14, 18, 22, 25}));
  // 25 fps: offset o is o * 40 ms.
  for (std::size_t k = 0; k < eval_offsets().size(); ++k) EXPECT_EQ(eval_horizons_ms()[k], 40 * eval_offsets()[k]);
}

TEST(Windows, ShortClipErrorNamesAction) {
  std::vector<MotionClip> clips = {make_clip(60, 2)};
  try {
    sample_windows(clips, 1, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kClipTooShort);
    EXPECT_NE(std::string(e.what()).find("walking"), std::string::npos);
  }
}

TEST(Windows, ExactLengthClipHasOneStart) {
  std::vector<MotionClip> clips = {make_clip(75, 2)};
  const auto w = sample_windows(clips, 4, 0);
  ASSERT_EQ(w.size(), 4u);
  for (const auto& x : w) {
    EXPECT_EQ(x.start, 0);
    EXPECT_EQ(x.input.rows(), 50);
    EXPECT_EQ(x.target.rows(), 25);
  }
}

TEST(Windows, ContentsAreContiguous) {
  MotionClip c = make_clip(100, 1);
  for (int f = 0; f < 100; ++f) c.frames.row(f).setConstant(static_cast<float>(f));
  for (const auto& w : sample_windows({c}, 20, 3)) {
    EXPECT_EQ(w.input(0, 0), static_cast<float>(w.start));
    EXPECT_EQ(w.target(0, 0), static_cast<float>(w.start + 50));
    EXPECT_EQ(w.target(24, 0), static_cast<float>(w.start + 74));
  }
}

TEST(Windows, StartsAreUniform) {
  // 30 valid starts; chi-square with 29 dof, 99.9th percentile is 58.3.
  MotionClip c = make_clip(104, 1);
  const int n = 30000;
  const auto w = sample_windows({c}, n, 12);
  std::vector<int> counts(30, 0);
  for (const auto& x : w) counts[static_cast<std::size_t>(x.start)]++;
  double chi2 = 0.0;
  const double expected = n / 30.0;
  for (int k : counts) chi2 += (k - expected) * (k - expected) / expected;
  EXPECT_LT(chi2, 58.3);
}

TEST(Windows, GroupedByActionInLabelOrder) {
  MotionClip a = make_clip(80, 1), b = make_clip(80, 1);
  a.action = "zeta";
  b.action = "alpha";
  const auto w = sample_windows({a, b}, 2, 1);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[0].action, "alpha");
  EXPECT_EQ(w[0].clip, 1u);
  EXPECT_EQ(w[3].action, "zeta");
}

TEST(Mpjpe, PythagoreanJoint) {
  Matrix<double> p = Matrix<double>::Zero(2, 6), t = Matrix<double>::Zero(2, 6);
  p.row(1) << 3, 4, 0, 0, 0, 0;
  const auto e = mpjpe(p, t, {1, 2});
  EXPECT_EQ(e[0], 0.0);
  EXPECT_EQ(e[1], 2.5);  // (5 + 0) / 2 joints
  EXPECT_THROW(mpjpe(p, t, {3}), Error);
  EXPECT_THROW(mpjpe(p, t, {0}), Error);
}

TEST(Evaluate, BaselineOnConstantClipsIsZero) {
  std::vector<MotionClip> clips = {make_clip(90, 2, 5.0f), make_clip(90, 2, -1.0f)};
  clips[1].action = "eating";
  const auto r = evaluate(baseline_predictor(), clips, 8, 0, "baseline");
  EXPECT_EQ(r.samples, 16u);
  for (double v : r.overall) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.per_action.size(), 2u);
}

TEST(Evaluate, LinearMotionBaselineError) {
  // One joint moving 1 mm per frame along x: the baseline lags o mm at offset o.
  MotionClip c = make_clip(120, 1);
  for (int f = 0; f < 120; ++f) c.frames(f, 0) = static_cast<float>(f);
  const auto r = evaluate(baseline_predictor(), {c}, 16, 5, "baseline");
  for (std::size_t k = 0; k < r.offsets.size(); ++k) EXPECT_EQ(r.overall[k], r.offsets[k]);
}

TEST(Evaluate, BaselineErrorGrowsWithHorizonOnSynthetic) {
  SynthConfig sc;
  sc.clips = 16;
  const auto r = evaluate(baseline_predictor(), synth_generate(sc), 32, 1, "baseline");
  for (std::size_t k = 1; k < r.overall.size(); ++k) EXPECT_GT(r.overall[k], r.overall[k - 1]);
}

TEST(Report, RoundTripsExactly) {
  SynthConfig sc;
  sc.clips = 15;
  const auto r = evaluate(baseline_predictor(), synth_generate(sc), 3, 9, "baseline");
  const std::string text = format_report(r);
  EXPECT_NE(text.find("action\tsamples\t80ms\t160ms"), std::string::npos);
  EXPECT_EQ(parse_report(text), r);
  EXPECT_THROW(parse_report("ALL\t1\t2\n"), Error);
}

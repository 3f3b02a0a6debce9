#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "haarmodic/error.hpp"
#include "haarmodic/model.hpp"
#include "haarmodic/types.hpp"

namespace haarmodic {

/// One recorded action: F frames x 3K coordinates in mm.
struct MotionClip {
  std::string action;
  std::string subject;
  std::uint32_t fps = 25;
  Matrix<float> frames;

  int joints() const { return static_cast<int>(frames.cols() / 3); }
  int frame_count() const { return static_cast<int>(frames.rows()); }

  bool operator==(const MotionClip& o) const {
    return action == o.action && subject == o.subject && fps == o.fps &&
           frames.rows() == o.frames.rows() && frames.cols() == o.frames.cols() &&
           std::equal(frames.data(), frames.data() + frames.size(), o.frames.data(),
                      [](float a, float b) { return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b); });
  }
};

// ---------------------------------------------------------------------------
// MOTB clip files
//
//   offset  size        field
//   0       8           magic "MOTB0001"
//   8       4           K (joints), u32 LE
//   12      4           fps, u32 LE
//   16      4           F (frames), u32 LE
//   20      4           action label byte length, u32 LE
//   24      4           subject label byte length, u32 LE
//   28      A + S       UTF-8 action label, then subject label
//   ...     F*3K*4      float32 LE coordinates, frame-major
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kMotbMagic = {'M', 'O', 'T', 'B', '0', '0', '0', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

}  // namespace detail

inline std::string encode_clip(const MotionClip& clip) {
  if (clip.frames.cols() % 3 != 0 || clip.frames.cols() == 0) {
    throw Error(ErrorCode::kSizeMismatch, "clip column count must be a positive multiple of 3");
  }
  std::string out(kMotbMagic.begin(), kMotbMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(clip.frames.cols() / 3));
  detail::put_u32(out, clip.fps);
  detail::put_u32(out, static_cast<std::uint32_t>(clip.frames.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(clip.action.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(clip.subject.size()));
  out += clip.action;
  out += clip.subject;
  out.reserve(out.size() + static_cast<std::size_t>(clip.frames.size()) * 4);
  for (Eigen::Index i = 0; i < clip.frames.size(); ++i) {
    detail::put_u32(out, std::bit_cast<std::uint32_t>(clip.frames.data()[i]));
  }
  return out;
}

inline MotionClip decode_clip(const std::string& bytes) {
  constexpr std::size_t kHeader = 28;
  if (bytes.size() < kMotbMagic.size() ||
      !std::equal(kMotbMagic.begin(), kMotbMagic.end(), bytes.begin())) {
    throw Error(ErrorCode::kBadMagic, "not a MOTB0001 file");
  }
  if (bytes.size() < kHeader) throw Error(ErrorCode::kTruncated, "header cut short");
  const std::uint64_t joints = detail::get_u32(bytes, 8);
  const std::uint32_t fps = detail::get_u32(bytes, 12);
  const std::uint64_t frames = detail::get_u32(bytes, 16);
  const std::uint64_t action_len = detail::get_u32(bytes, 20);
  const std::uint64_t subject_len = detail::get_u32(bytes, 24);
  if (joints == 0) throw Error(ErrorCode::kSizeMismatch, "joint count is zero");
  const std::uint64_t payload = frames * joints * 3 * 4;
  const std::uint64_t expected = kHeader + action_len + subject_len + payload;
  if (bytes.size() < expected) {
    throw Error(ErrorCode::kTruncated, "payload has " + std::to_string(bytes.size()) +
                                           " bytes, header promises " + std::to_string(expected));
  }
  if (bytes.size() > expected) {
    throw Error(ErrorCode::kSizeMismatch, "file has " + std::to_string(bytes.size() - expected) +
                                              " bytes beyond the K/F payload");
  }
  MotionClip clip;
  clip.fps = fps;
  clip.action = bytes.substr(kHeader, action_len);
  clip.subject = bytes.substr(kHeader + action_len, subject_len);
  clip.frames.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(joints * 3));
  std::size_t at = kHeader + action_len + subject_len;
  for (Eigen::Index i = 0; i < clip.frames.size(); ++i, at += 4) {
    const float v = std::bit_cast<float>(detail::get_u32(bytes, at));
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteData, "non-finite coordinate at index " + std::to_string(i));
    clip.frames.data()[i] = v;
  }
  return clip;
}

inline void write_clip(const MotionClip& clip, const std::filesystem::path& path) {
  detail::write_file(path, encode_clip(clip));
}

inline MotionClip read_clip(const std::filesystem::path& path) {
  return decode_clip(detail::read_file(path));
}

/// Every *.motb file in `dir`, in lexicographic path order.
inline std::vector<MotionClip> read_clip_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::kMissingDataset, "dataset directory " + dir.string() + " does not exist");
  }
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".motb") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw Error(ErrorCode::kMissingDataset, "no .motb clips in " + dir.string());
  std::vector<MotionClip> clips;
  for (const auto& p : paths) clips.push_back(read_clip(p));
  return clips;
}

// ---------------------------------------------------------------------------
// Synthetic motion
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& synthetic_action_names() {
  static const std::vector<std::string> names = {
      "walking",    "eating",      "smoking",  "discussion", "directions",
      "greeting",   "phoning",     "posing",   "purchases",  "sitting",
      "sittingdown", "takingphoto", "waiting", "walkingdog", "walkingtogether"};
  return names;
}

struct SynthConfig {
  int clips = 32;
  int joints = 22;
  int fps = 25;
  int frames = 200;
  std::uint64_t seed = 0;
  double min_period_s = 0.4;
  double max_period_s = 4.0;
  double min_amplitude_mm = 20.0;
  double max_amplitude_mm = 150.0;
  double offset_range_mm = 400.0;
};

/// Each joint coordinate is its offset plus a sum of 2-4 sinusoids shared by
/// the joint's three axes (same period, per-axis amplitude and phase).
inline std::vector<MotionClip> synth_generate(const SynthConfig& cfg) {
  if (cfg.clips < 0 || cfg.joints < 1 || cfg.fps < 1 || cfg.frames < 1) {
    throw Error(ErrorCode::kInvalidArgument, "synth: dimensions must be positive");
  }
  Rng rng(cfg.seed);
  const auto& names = synthetic_action_names();
  std::vector<MotionClip> clips;
  clips.reserve(static_cast<std::size_t>(cfg.clips));
  const double two_pi = 2.0 * std::numbers::pi;
  for (int n = 0; n < cfg.clips; ++n) {
    MotionClip clip;
    clip.action = names[static_cast<std::size_t>(n) % names.size()];
    clip.subject = "synth" + std::to_string(n);
    clip.fps = static_cast<std::uint32_t>(cfg.fps);
    clip.frames.resize(cfg.frames, 3 * cfg.joints);
    for (int j = 0; j < cfg.joints; ++j) {
      std::array<double, 3> offset{};
      for (double& o : offset) o = uniform(rng, -cfg.offset_range_mm, cfg.offset_range_mm);
      const int components = 2 + static_cast<int>(uniform_index(rng, 3));
      struct Wave {
        double omega;
        std::array<double, 3> amp;
        std::array<double, 3> phase;
      };
      std::vector<Wave> waves(static_cast<std::size_t>(components));
      for (Wave& w : waves) {
        w.omega = two_pi / uniform(rng, cfg.min_period_s, cfg.max_period_s);
        for (int a = 0; a < 3; ++a) {
          w.amp[a] = uniform(rng, cfg.min_amplitude_mm, cfg.max_amplitude_mm);
          w.phase[a] = uniform(rng, 0.0, two_pi);
        }
      }
      for (int f = 0; f < cfg.frames; ++f) {
        const double t = static_cast<double>(f) / cfg.fps;
        for (int a = 0; a < 3; ++a) {
          double v = offset[a];
          for (const Wave& w : waves) v += w.amp[a] * std::sin(w.omega * t + w.phase[a]);
          clip.frames(f, 3 * j + a) = static_cast<float>(v);
        }
      }
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

// ---------------------------------------------------------------------------
// Evaluation protocol
// ---------------------------------------------------------------------------

/// Frame offsets after the last input frame for 80..1000 ms at 25 fps.
inline const std::vector<int>& eval_offsets() {
  static const std::vector<int> offsets = {2, 4, 8, 10, 14, 18, 22, 25};
  return offsets;
}

inline const std::vector<int>& eval_horizons_ms() {
  static const std::vector<int> ms = {80, 160, 320, 400, 560, 720, 880, 1000};
  return ms;
}

inline constexpr int kEvalTargetFrames = 25;

struct EvalWindow {
  Matrix<float> input;
  Matrix<float> target;
  std::string action;
  std::size_t clip = 0;
  int start = 0;
};

/// All (clip, start) pairs giving `window_frames` contiguous frames.
struct WindowIndex {
  std::vector<std::pair<std::size_t, int>> starts;

  static WindowIndex build(const std::vector<MotionClip>& clips, const std::vector<std::size_t>& members,
                           int window_frames) {
    WindowIndex idx;
    for (std::size_t c : members) {
      const int valid = clips[c].frame_count() - window_frames + 1;
      for (int s = 0; s < valid; ++s) idx.starts.emplace_back(c, s);
    }
    return idx;
  }

  std::pair<std::size_t, int> draw(Rng& rng) const {
    return starts[static_cast<std::size_t>(uniform_index(rng, starts.size()))];
  }
};

/// Draws `per_action` windows of T + 25 frames for every action label, in
/// label order. Start positions are uniform over every valid start of every
/// clip with that label.
inline std::vector<EvalWindow> sample_windows(const std::vector<MotionClip>& clips, int per_action,
                                              std::uint64_t seed, int input_frames = 50,
                                              int target_frames = kEvalTargetFrames) {
  if (per_action < 1) throw Error(ErrorCode::kInvalidArgument, "per_action must be >= 1");
  std::map<std::string, std::vector<std::size_t>> by_action;
  for (std::size_t i = 0; i < clips.size(); ++i) by_action[clips[i].action].push_back(i);
  const int window_frames = input_frames + target_frames;
  std::vector<std::string> short_actions;
  std::vector<WindowIndex> indices;
  for (const auto& [action, members] : by_action) {
    indices.push_back(WindowIndex::build(clips, members, window_frames));
    if (indices.back().starts.empty()) short_actions.push_back(action);
  }
  if (!short_actions.empty()) {
    std::string list;
    for (const auto& a : short_actions) list += (list.empty() ? "" : ", ") + a;
    throw Error(ErrorCode::kClipTooShort,
                "no clip with >= " + std::to_string(window_frames) + " frames for action(s): " + list);
  }
  Rng rng(seed);
  std::vector<EvalWindow> windows;
  std::size_t a = 0;
  for (const auto& [action, members] : by_action) {
    for (int i = 0; i < per_action; ++i) {
      const auto [clip, start] = indices[a].draw(rng);
      EvalWindow w;
      w.action = action;
      w.clip = clip;
      w.start = start;
      w.input = clips[clip].frames.middleRows(start, input_frames);
      w.target = clips[clip].frames.middleRows(start + input_frames, target_frames);
      windows.push_back(std::move(w));
    }
    ++a;
  }
  return windows;
}

/// Per-offset mean over joints of the Euclidean joint error. Offsets are
/// 1-based: offset o reads row o - 1.
template <typename Scalar>
std::vector<double> mpjpe(const Matrix<Scalar>& pred, const Matrix<Scalar>& target,
                          const std::vector<int>& offsets) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "mpjpe: prediction and target shapes differ");
  }
  if (pred.cols() % 3 != 0 || pred.cols() == 0) {
    throw Error(ErrorCode::kShapeMismatch, "mpjpe: column count not a multiple of 3");
  }
  const Eigen::Index joints = pred.cols() / 3;
  std::vector<double> out;
  out.reserve(offsets.size());
  for (int o : offsets) {
    if (o < 1 || o > pred.rows()) {
      throw Error(ErrorCode::kOutOfRange, "mpjpe: offset " + std::to_string(o) + " outside 1.." +
                                              std::to_string(pred.rows()));
    }
    double acc = 0.0;
    for (Eigen::Index j = 0; j < joints; ++j) {
      double sq = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double d = static_cast<double>(pred(o - 1, 3 * j + a)) - static_cast<double>(target(o - 1, 3 * j + a));
        sq += d * d;
      }
      acc += std::sqrt(sq);
    }
    out.push_back(acc / static_cast<double>(joints));
  }
  return out;
}

struct ActionRow {
  std::size_t samples = 0;
  std::vector<double> mpjpe_mm;

  bool operator==(const ActionRow&) const = default;
};

struct EvalReport {
  std::vector<int> offsets = eval_offsets();
  std::vector<double> overall;
  std::map<std::string, ActionRow> per_action;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::string predictor;

  bool operator==(const EvalReport&) const = default;
};

/// Maps a batch of T x C float windows to H x C float predictions.
using BatchPredictor =
    std::function<std::vector<Matrix<float>>(const std::vector<Matrix<float>>&, int horizon)>;

inline BatchPredictor baseline_predictor() {
  return [](const std::vector<Matrix<float>>& windows, int horizon) {
    std::vector<Matrix<float>> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(zero_velocity_baseline(w, horizon));
    return out;
  };
}

template <typename Scalar>
BatchPredictor network_predictor(const Network<Scalar>& net, std::size_t chunk = 256) {
  return [&net, chunk](const std::vector<Matrix<float>>& windows, int horizon) {
    std::vector<Matrix<float>> out;
    out.reserve(windows.size());
    for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
      const std::size_t end = std::min(windows.size(), begin + chunk);
      std::vector<Matrix<Scalar>> part;
      for (std::size_t i = begin; i < end; ++i) part.push_back(windows[i].template cast<Scalar>());
      for (auto& p : rollout_batch(net, part, horizon)) out.push_back(p.template cast<float>());
    }
    return out;
  };
}

/// Rolls every window out to 25 frames and averages MPJPE per offset over
/// joints, then over windows (overall and per action).
inline EvalReport evaluate_windows(const BatchPredictor& predictor, const std::vector<EvalWindow>& windows,
                                   std::uint64_t seed, std::string predictor_name) {
  EvalReport report;
  report.seed = seed;
  report.samples = windows.size();
  report.predictor = std::move(predictor_name);
  const std::size_t n_off = report.offsets.size();
  report.overall.assign(n_off, 0.0);
  if (windows.empty()) return report;
  std::vector<Matrix<float>> inputs;
  inputs.reserve(windows.size());
  for (const auto& w : windows) inputs.push_back(w.input);
  const auto preds = predictor(inputs, kEvalTargetFrames);
  std::map<std::string, std::vector<double>> sums;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto err = mpjpe<float>(preds[i], windows[i].target, report.offsets);
    auto& row = report.per_action[windows[i].action];
    auto& sum = sums[windows[i].action];
    if (sum.empty()) sum.assign(n_off, 0.0);
    row.samples += 1;
    for (std::size_t k = 0; k < n_off; ++k) {
      report.overall[k] += err[k];
      sum[k] += err[k];
    }
  }
  for (std::size_t k = 0; k < n_off; ++k) report.overall[k] /= static_cast<double>(windows.size());
  for (auto& [action, row] : report.per_action) {
    row.mpjpe_mm = sums[action];
    for (double& v : row.mpjpe_mm) v /= static_cast<double>(row.samples);
  }
  return report;
}

inline EvalReport evaluate(const BatchPredictor& predictor, const std::vector<MotionClip>& clips,
                           int per_action, std::uint64_t seed, std::string predictor_name,
                           int input_frames = 50) {
  return evaluate_windows(predictor, sample_windows(clips, per_action, seed, input_frames), seed,
                          std::move(predictor_name));
}

// ---------------------------------------------------------------------------
// Report serialization: tab-separated text.
//
//   # haarmodic-eval v1
//   # predictor=<name>
//   # seed=<u64>
//   # samples=<n>
//   action  samples  80ms  160ms  ...  1000ms
//   ALL     <n>      <v>   ...
//   <label> <n>      <v>   ...        (one row per action, label order)
//
// Values use %.17g so a re-read reproduces them exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  out << "# haarmodic-eval v1\n";
  out << "# predictor=" << r.predictor << "\n";
  out << "# seed=" << r.seed << "\n";
  out << "# samples=" << r.samples << "\n";
  out << "action\tsamples";
  const auto& ms = eval_horizons_ms();
  for (std::size_t k = 0; k < r.offsets.size(); ++k) {
    out << '\t' << (k < ms.size() ? std::to_string(ms[k]) + "ms" : "f" + std::to_string(r.offsets[k]));
  }
  out << '\n';
  auto row = [&](const std::string& name, std::size_t n, const std::vector<double>& vals) {
    out << name << '\t' << n;
    for (double v : vals) out << '\t' << detail::format_double(v);
    out << '\n';
  };
  row("ALL", r.samples, r.overall);
  for (const auto& [action, a] : r.per_action) row(action, a.samples, a.mpjpe_mm);
  return out.str();
}

inline EvalReport parse_report(const std::string& text) {
  EvalReport r;
  std::istringstream in(text);
  std::string line;
  bool saw_header = false;
  auto bad = [](const std::string& msg) { return Error(ErrorCode::kInvalidArgument, "eval report: " + msg); };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string val = line.substr(eq + 1);
      if (key == "predictor") r.predictor = val;
      else if (key == "seed") r.seed = std::stoull(val);
      else if (key == "samples") r.samples = std::stoull(val);
      continue;
    }
    std::istringstream fields(line);
    std::string name;
    std::getline(fields, name, '\t');
    if (!saw_header) {
      if (name != "action") throw bad("missing column header");
      saw_header = true;
      continue;
    }
    std::string count;
    std::getline(fields, count, '\t');
    std::vector<double> vals;
    std::string v;
    while (std::getline(fields, v, '\t')) vals.push_back(std::stod(v));
    if (vals.size() != r.offsets.size()) throw bad("row '" + name + "' has the wrong number of values");
    if (name == "ALL") {
      r.overall = vals;
    } else {
      r.per_action[name] = ActionRow{std::stoull(count), vals};
    }
  }
  if (!saw_header) throw bad("empty report");
  return r;
}

}  // namespace haarmodic

#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "haarmodic/checkpoint.hpp"
#include "haarmodic/config.hpp"
#include "haarmodic/data.hpp"
#include "haarmodic/selfcheck.hpp"
#include "haarmodic/training.hpp"

namespace haarmodic::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,           // bad flag, bad config value, unknown config key
  kExitIo = 3,              // unreadable or unwritable path
  kExitDataFormat = 4,      // malformed MOTB clip or checkpoint payload
  kExitMissingDataset = 5,  // dataset dir absent/empty, or no clip long enough
  kExitNonFinite = 6,       // training produced a non-finite loss or gradient
  kExitConfigMismatch = 7,  // checkpoint disagrees with requested config or data
  kExitSelfcheck = 8,       // a selfcheck suite failed
};

inline constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  usage or configuration error\n"
    "  3  I/O error\n"
    "  4  malformed clip or checkpoint data\n"
    "  5  dataset missing, empty, or too short\n"
    "  6  non-finite loss or gradient during training\n"
    "  7  checkpoint/config/data mismatch\n"
    "  8  selfcheck failure\n"
    "Environment:\n"
    "  HAARMODIC_OUT_DIR  default output root (otherwise ./runs)";

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo:
      return kExitIo;
    case ErrorCode::kBadMagic:
    case ErrorCode::kTruncated:
    case ErrorCode::kSizeMismatch:
    case ErrorCode::kNonFiniteData:
      return kExitDataFormat;
    case ErrorCode::kMissingDataset:
    case ErrorCode::kClipTooShort:
      return kExitMissingDataset;
    case ErrorCode::kNonFiniteLoss:
    case ErrorCode::kNonFiniteGradient:
      return kExitNonFinite;
    case ErrorCode::kConfigMismatch:
      return kExitConfigMismatch;
    default:
      return kExitUsage;
  }
}

namespace detail {

namespace fs = std::filesystem;

/// Flags shared by the config-driven commands. Every set option becomes a
/// config key applied after the --config file.
struct Overrides {
  std::string config_file;
  KeyValues values;

  void add(const std::string& key, const std::string& value) { values.emplace_back(key, value); }
};

template <typename T>
void bind(CLI::App* app, Overrides& ov, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<T>(
      flag,
      [&ov, key](const T& v) {
        if constexpr (std::is_same_v<T, std::string>) {
          ov.add(key, v);
        } else if constexpr (std::is_floating_point_v<T>) {
          ov.add(key, kv::from_double(v));
        } else {
          ov.add(key, std::to_string(v));
        }
      },
      help);
}

inline void bind_switch(CLI::App* app, Overrides& ov, const std::string& flag, const std::string& key,
                        const std::string& value, const std::string& help) {
  app->add_flag_callback(flag, [&ov, key, value] { ov.add(key, value); }, help);
}

inline RunConfig resolve(const Overrides& ov, const std::string& default_subdir) {
  RunConfig cfg;
  cfg.out_dir = (fs::path(RunConfig::default_out_dir()) / default_subdir).string();
  if (!ov.config_file.empty()) {
    if (!fs::exists(ov.config_file)) throw Error(ErrorCode::kIo, "config file not found: " + ov.config_file);
    cfg.apply_all(parse_key_values(haarmodic::detail::read_file(ov.config_file)));
  }
  cfg.apply_all(ov.values);
  cfg.validate();
  return cfg;
}

/// True when the config file or flags set any architecture key.
inline bool sets_model_keys(const Overrides& ov) {
  const KeyValues model_keys = model_key_values(ModelConfig{});
  auto is_model = [&](const std::string& key) {
    return key != "seed" && std::any_of(model_keys.begin(), model_keys.end(),
                                        [&](const auto& kv) { return kv.first == key; });
  };
  KeyValues all;
  if (!ov.config_file.empty()) all = parse_key_values(haarmodic::detail::read_file(ov.config_file));
  all.insert(all.end(), ov.values.begin(), ov.values.end());
  return std::any_of(all.begin(), all.end(), [&](const auto& kv) { return is_model(kv.first); });
}

inline void require_dataset(const std::string& dir) {
  if (dir.empty()) throw Error(ErrorCode::kMissingDataset, "no dataset given (use --data or data_dir=)");
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kMissingDataset, "dataset directory not found: " + dir);
}

inline void require_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCode::kIo, "cannot create output directory " + dir.string() +
                                    (ec ? ": " + ec.message() : std::string()));
  }
  const fs::path probe = dir / ".haarmodic_write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw Error(ErrorCode::kIo, "output directory not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

inline std::string config_block(const ModelConfig& c) {
  std::string out;
  for (const auto& [k, v] : model_key_values(c)) out += "  " + k + "=" + v + "\n";
  return out;
}

inline bool same_architecture(ModelConfig a, ModelConfig b) {
  a.seed = b.seed = 0;
  return a == b;
}

inline std::string format_row(const std::string& label, const std::vector<double>& vals) {
  std::string out = label;
  char buf[32];
  for (double v : vals) {
    std::snprintf(buf, sizeof buf, "\t%.3f", v);
    out += buf;
  }
  return out;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  SynthConfig synth;
  std::optional<std::string> out_dir;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const fs::path dir = a.out_dir ? fs::path(*a.out_dir) : fs::path(RunConfig::default_out_dir()) / "synth";
  const auto clips = synth_generate(a.synth);
  if (clips.empty()) return kExitOk;
  require_writable_dir(dir);
  const SynthConfig& s = a.synth;
  haarmodic::detail::write_file(dir / "synth.txt", format_key_values({{"clips", std::to_string(s.clips)},
                                                                       {"joints", std::to_string(s.joints)},
                                                                       {"fps", std::to_string(s.fps)},
                                                                       {"frames", std::to_string(s.frames)},
                                                                       {"seed", std::to_string(s.seed)}}));
  for (std::size_t i = 0; i < clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%04zu.motb", i);
    const fs::path path = dir / name;
    write_clip(clips[i], path);
    out << path.string() << '\t' << clips[i].action << '\t' << clips[i].subject << '\t' << clips[i].frame_count()
        << " frames\t" << clips[i].joints() << " joints\n";
  }
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

template <typename Scalar>
void run_training(const RunConfig& cfg, const std::vector<MotionClip>& clips, std::ostream& out) {
  const fs::path dir(cfg.out_dir);
  out << "iteration\tlr\ttotal\tl_re\tl_v\n";
  const auto res = train<Scalar>(clips, cfg.train, dir, [&](const MetricRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%lld\t%.3g\t%.4f\t%.4f\t%.4f\n", r.iteration, r.lr, r.loss.total, r.loss.l_re,
                  r.loss.l_v);
    out << buf << std::flush;
  });
  out << "checkpoint: " << (dir / "checkpoint").string() << '\n';
}

inline int cmd_train(const Overrides& ov, std::ostream& out) {
  const RunConfig cfg = resolve(ov, "train");
  require_dataset(cfg.data_dir);
  require_writable_dir(cfg.out_dir);
  const auto clips = read_clip_dir(cfg.data_dir);
  write_resolved_config(cfg, cfg.out_dir);
  if (cfg.precision == "double") run_training<double>(cfg, clips, out);
  else run_training<float>(cfg, clips, out);
  return kExitOk;
}

// ---- eval / baseline ------------------------------------------------------

inline int cmd_eval(const Overrides& ov, bool baseline, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve(ov, baseline ? "baseline" : "eval");
  require_dataset(cfg.data_dir);
  if (!baseline && cfg.checkpoint.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "eval needs --checkpoint (or --baseline)");
  }
  if (!baseline && !fs::exists(fs::path(cfg.checkpoint) / "manifest.txt")) {
    throw Error(ErrorCode::kIo, "checkpoint not found: " + cfg.checkpoint);
  }
  require_writable_dir(cfg.out_dir);
  const auto clips = read_clip_dir(cfg.data_dir);

  EvalReport report;
  if (baseline) {
    report = evaluate(baseline_predictor(), clips, cfg.per_action, cfg.seed(), "zero-velocity",
                      cfg.train.model.input_frames);
  } else {
    const CheckpointInfo info = read_checkpoint_info(cfg.checkpoint);
    if (sets_model_keys(ov) && !same_architecture(info.config, cfg.train.model)) {
      err << "checkpoint config:\n" << config_block(info.config) << "requested config:\n"
          << config_block(cfg.train.model);
      throw Error(ErrorCode::kConfigMismatch, "checkpoint architecture differs from the requested config");
    }
    for (const auto& c : clips) {
      if (c.joints() != info.config.joints) {
        err << "checkpoint config:\n" << config_block(info.config);
        throw Error(ErrorCode::kConfigMismatch, "clip '" + c.subject + "' has " + std::to_string(c.joints()) +
                                                    " joints, checkpoint expects " +
                                                    std::to_string(info.config.joints));
      }
    }
    const std::string name = "network:" + cfg.checkpoint;
    if (cfg.precision == "double") {
      const auto net = load_checkpoint<double>(cfg.checkpoint);
      report = evaluate(network_predictor(net), clips, cfg.per_action, cfg.seed(), name, net.config.input_frames);
    } else {
      const auto net = load_checkpoint<float>(cfg.checkpoint);
      report = evaluate(network_predictor(net), clips, cfg.per_action, cfg.seed(), name, net.config.input_frames);
    }
  }
  const fs::path dir(cfg.out_dir);
  write_resolved_config(cfg, dir);
  haarmodic::detail::write_file(dir / "report.tsv", format_report(report));
  std::string header = "MPJPE(mm)";
  for (int ms : eval_horizons_ms()) header += "\t" + std::to_string(ms) + "ms";
  out << header << '\n' << format_row("ALL", report.overall) << '\n';
  out << "report: " << (dir / "report.tsv").string() << '\n';
  return kExitOk;
}

// ---- selfcheck ------------------------------------------------------------

inline int cmd_selfcheck(const SelfcheckOptions& opt, std::ostream& out, std::ostream& err) {
  const auto results = run_selfcheck(opt);
  std::vector<std::string> failed;
  out << "precision: " << to_string(opt.precision) << '\n';
  for (const auto& r : results) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s %-20s max_error=%.3e threshold=%.0e", r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.max_error, r.threshold);
    out << buf << "  (" << r.note << ")\n";
    if (!r.passed) failed.push_back(r.name);
  }
  if (failed.empty()) return kExitOk;
  std::string list;
  for (const auto& f : failed) list += (list.empty() ? "" : ", ") + f;
  err << "selfcheck failed: " << list << '\n';
  return kExitSelfcheck;
}

// ---- inspect --------------------------------------------------------------

inline int cmd_inspect(const std::string& dir, std::ostream& out) {
  const CheckpointInfo info = read_checkpoint_info(dir);
  const auto net = load_checkpoint<double>(dir);
  out << "checkpoint: " << dir << '\n';
  out << "precision: " << info.precision << '\n';
  out << "iteration: " << info.iteration << '\n';
  out << "config:\n" << config_block(info.config);
  out << "tensors: " << info.tensors.size() << "  parameters: " << net.parameter_count() << '\n';
  net.for_each_param([&](const std::string& name, const Param<double>& p) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "  %-28s %4ld x %-4ld  norm=%.6g  max_abs=%.6g", name.c_str(),
                  static_cast<long>(p.value.rows()), static_cast<long>(p.value.cols()), p.value.norm(),
                  p.value.size() ? p.value.cwiseAbs().maxCoeff() : 0.0);
    out << buf << '\n';
  });
  return kExitOk;
}

inline void add_run_options(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config_file, "key=value run configuration file (flags override it)");
  bind<std::string>(cmd, ov, "--data", "data_dir", "directory of .motb clips");
  bind<std::string>(cmd, ov, "--out-dir", "out_dir", "output directory (default $HAARMODIC_OUT_DIR/<command>)");
  bind<std::uint64_t>(cmd, ov, "--seed", "seed", "seed for initialization, sampling and augmentation");
  bind<std::string>(cmd, ov, "--precision", "precision", "float or double arithmetic");
}

}  // namespace detail

/// Entry point for the haarmodic command-line tool.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"HaarMoDic human-motion prediction: synthesis, training, evaluation, self-checks.", "haarmodic"};
  app.require_subcommand(1);
  app.footer(kExitCodeHelp);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "write synthetic sinusoidal MOTB clips");
  c_synth->add_option("--clips", synth.synth.clips, "number of clips")->capture_default_str();
  c_synth->add_option("--joints", synth.synth.joints, "joints per frame")->capture_default_str();
  c_synth->add_option("--frames", synth.synth.frames, "frames per clip")->capture_default_str();
  c_synth->add_option("--fps", synth.synth.fps, "frame rate")->capture_default_str();
  c_synth->add_option("--seed", synth.synth.seed, "generator seed")->capture_default_str();
  c_synth->add_option("--out-dir", synth.out_dir, "output directory (default $HAARMODIC_OUT_DIR/synth)");

  Overrides train_ov;
  auto* c_train = app.add_subcommand("train", "train a network on a clip directory");
  add_run_options(c_train, train_ov);
  bind<int>(c_train, train_ov, "--iterations", "iterations", "training iterations");
  bind<int>(c_train, train_ov, "--batch-size", "batch_size", "windows per batch");
  bind<int>(c_train, train_ov, "--log-every", "log_every", "metrics interval in iterations");
  bind<int>(c_train, train_ov, "--checkpoint-every", "checkpoint_every", "checkpoint interval (0 = final only)");
  bind<int>(c_train, train_ov, "--input-frames", "input_frames", "observed frames T");
  bind<int>(c_train, train_ov, "--output-frames", "output_frames", "predicted frames per pass");
  bind<int>(c_train, train_ov, "--joints", "joints", "joints per frame");
  bind<int>(c_train, train_ov, "--blocks", "blocks", "number of MR-Haar blocks");
  bind<int>(c_train, train_ov, "--levels", "levels", "resolution levels per block");
  bind<std::string>(c_train, train_ov, "--fc-per-level", "fc_per_level", "FC blocks per level, e.g. 4,2,1");
  bind<double>(c_train, train_ov, "--base-lr", "base_lr", "learning rate before the drop");
  bind<double>(c_train, train_ov, "--flip-prob", "flip_prob", "probability of a lateral flip");
  bind<double>(c_train, train_ov, "--reverse-prob", "reverse_prob", "probability of time reversal");
  bind_switch(c_train, train_ov, "--no-dct", "use_dct", "0", "skip the DCT/IDCT wrapper");
  bind_switch(c_train, train_ov, "--no-ln", "use_ln", "0", "disable layer norm in FC blocks");
  c_train->add_flag_callback(
      "--no-augment",
      [&train_ov] {
        train_ov.add("flip_prob", "0");
        train_ov.add("reverse_prob", "0");
      },
      "disable flip and reverse augmentation");

  Overrides eval_ov;
  bool eval_baseline = false;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint (or the baseline) at the 8 horizons");
  add_run_options(c_eval, eval_ov);
  bind<std::string>(c_eval, eval_ov, "--checkpoint", "checkpoint", "checkpoint directory");
  bind<int>(c_eval, eval_ov, "--per-action", "per_action", "windows sampled per action");
  c_eval->add_flag("--baseline", eval_baseline, "evaluate the zero-velocity baseline instead");

  Overrides base_ov;
  auto* c_base = app.add_subcommand("baseline", "alias of eval --baseline");
  add_run_options(c_base, base_ov);
  bind<int>(c_base, base_ov, "--per-action", "per_action", "windows sampled per action");
  bind<int>(c_base, base_ov, "--input-frames", "input_frames", "observed frames T");

  SelfcheckOptions sc;
  std::string sc_precision = "float";
  auto* c_self = app.add_subcommand("selfcheck", "run transform and gradient property suites");
  c_self->add_option("--precision", sc_precision, "float (1e-5 / 1e-4) or double (1e-12 / 1e-6)")
      ->check(CLI::IsMember({"float", "double"}))
      ->capture_default_str();
  c_self->add_option("--seed", sc.seed, "suite seed")->capture_default_str();
  c_self->add_option("--grids", sc.grids, "random grids for the Haar suites")->capture_default_str();
  c_self->add_option("--gradient-seeds", sc.gradient_seeds, "seeds per gradient check")->capture_default_str();
  c_self->add_flag("--inject-zero-variance", sc.inject_zero_variance,
                   "feed an eps=0 layer norm a constant row (the guard must report failure)");

  std::string inspect_dir;
  auto* c_inspect = app.add_subcommand("inspect", "dump a checkpoint's manifest and tensor statistics");
  c_inspect->add_option("checkpoint", inspect_dir, "checkpoint directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth, out);
    if (c_train->parsed()) return cmd_train(train_ov, out);
    if (c_eval->parsed()) return cmd_eval(eval_ov, eval_baseline, out, err);
    if (c_base->parsed()) return cmd_eval(base_ov, true, out, err);
    if (c_self->parsed()) {
      sc.precision = sc_precision == "double" ? Precision::kDouble : Precision::kFloat;
      return cmd_selfcheck(sc, out, err);
    }
    if (c_inspect->parsed()) return cmd_inspect(inspect_dir, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace haarmodic::cli

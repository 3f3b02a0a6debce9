#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "haarmodic/data.hpp"
#include "haarmodic/error.hpp"
#include "haarmodic/kv.hpp"
#include "haarmodic/training.hpp"

namespace haarmodic {

inline constexpr const char* kOutDirEnv = "HAARMODIC_OUT_DIR";

/// Everything a CLI run needs. Loaded from flat key=value text; command-line
/// flags are applied on top. `seed` drives both initialization and sampling.
struct RunConfig {
  TrainConfig train;
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint;
  std::string precision = "float";
  int per_action = 256;

  RunConfig() { out_dir = default_out_dir(); }

  static std::string default_out_dir() {
    const char* env = std::getenv(kOutDirEnv);
    return env != nullptr && *env != '\0' ? env : "runs";
  }

  std::uint64_t seed() const { return train.seed; }
  void set_seed(std::uint64_t s) {
    train.seed = s;
    train.model.seed = s;
  }

  /// Throws kUnknownKey for keys outside the schema.
  void apply(const std::string& key, const std::string& value) {
    auto as_int = [&] { return static_cast<int>(kv::to_int(key, value)); };
    Schedule& s = train.schedule;
    AugmentConfig& a = train.augment;
    if (key == "seed") set_seed(kv::to_u64(key, value));
    else if (apply_model_key(train.model, key, value)) return;
    else if (key == "base_lr") s.base_lr = kv::to_double(key, value);
    else if (key == "drop_lr") s.drop_lr = kv::to_double(key, value);
    else if (key == "drop_at") s.drop_at = as_int();
    else if (key == "decay") s.decay = kv::to_double(key, value);
    else if (key == "decay_every") s.decay_every = as_int();
    else if (key == "total_iterations") s.total = as_int();
    else if (key == "flip_prob") a.flip_prob = kv::to_double(key, value);
    else if (key == "reverse_prob") a.reverse_prob = kv::to_double(key, value);
    else if (key == "flip_axis") a.flip_axis = as_int();
    else if (key == "iterations") train.iterations = as_int();
    else if (key == "batch_size") train.batch_size = as_int();
    else if (key == "log_every") train.log_every = as_int();
    else if (key == "checkpoint_every") train.checkpoint_every = as_int();
    else if (key == "data_dir") data_dir = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "precision") precision = value;
    else if (key == "per_action") per_action = as_int();
    else throw Error(ErrorCode::kUnknownKey, "unknown config key '" + key + "'");
  }

  void apply_all(const KeyValues& kvs) {
    for (const auto& [k, v] : kvs) apply(k, v);
  }

  void validate() const {
    train.validate();
    if (precision != "float" && precision != "double") {
      throw Error(ErrorCode::kInvalidArgument, "precision must be 'float' or 'double', got '" + precision + "'");
    }
    if (per_action < 1) throw Error(ErrorCode::kInvalidArgument, "per_action must be >= 1");
  }

  KeyValues key_values() const {
    KeyValues out = model_key_values(train.model);
    const Schedule& s = train.schedule;
    const AugmentConfig& a = train.augment;
    const KeyValues rest = {
        {"base_lr", kv::from_double(s.base_lr)},
        {"drop_lr", kv::from_double(s.drop_lr)},
        {"drop_at", std::to_string(s.drop_at)},
        {"decay", kv::from_double(s.decay)},
        {"decay_every", std::to_string(s.decay_every)},
        {"total_iterations", std::to_string(s.total)},
        {"flip_prob", kv::from_double(a.flip_prob)},
        {"reverse_prob", kv::from_double(a.reverse_prob)},
        {"flip_axis", std::to_string(a.flip_axis)},
        {"iterations", std::to_string(train.iterations)},
        {"batch_size", std::to_string(train.batch_size)},
        {"log_every", std::to_string(train.log_every)},
        {"checkpoint_every", std::to_string(train.checkpoint_every)},
        {"data_dir", data_dir},
        {"out_dir", out_dir},
        {"checkpoint", checkpoint},
        {"precision", precision},
        {"per_action", std::to_string(per_action)},
    };
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
  }
};

inline RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig cfg;
  cfg.apply_all(parse_key_values(detail::read_file(path)));
  return cfg;
}

/// Writes the resolved configuration as `config.txt` in `dir`.
inline void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  detail::write_file(dir / "config.txt", "# resolved run configuration\n" + format_key_values(cfg.key_values()));
}

}  // namespace haarmodic

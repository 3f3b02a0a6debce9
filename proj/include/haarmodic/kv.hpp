#pragma once

#include <charconv>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "haarmodic/error.hpp"
#include "haarmodic/model.hpp"

namespace haarmodic {

// Flat "key=value" text, one entry per line. '#' starts a comment line.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "line " + std::to_string(lineno) + ": expected key=value");
    }
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

namespace kv {

inline long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorCode::kInvalidArgument, key + ": '" + v + "' is not an integer");
  }
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorCode::kInvalidArgument, key + ": '" + v + "' is not an unsigned integer");
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, key + ": '" + v + "' is not a number");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::kInvalidArgument, key + ": '" + v + "' is not a boolean");
}

inline std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(static_cast<int>(to_int(key, trim(item))));
  return out;
}

inline std::string from_int_list(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

inline std::string from_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace kv

/// Applies one model key; returns false when the key is not a model key.
inline bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "input_frames") cfg.input_frames = static_cast<int>(kv::to_int(key, value));
  else if (key == "output_frames") cfg.output_frames = static_cast<int>(kv::to_int(key, value));
  else if (key == "joints") cfg.joints = static_cast<int>(kv::to_int(key, value));
  else if (key == "blocks") cfg.blocks = static_cast<int>(kv::to_int(key, value));
  else if (key == "levels") cfg.levels = static_cast<int>(kv::to_int(key, value));
  else if (key == "fc_per_level") cfg.fc_per_level = kv::to_int_list(key, value);
  else if (key == "use_dct") cfg.use_dct = kv::to_bool(key, value);
  else if (key == "use_ln") cfg.use_ln = kv::to_bool(key, value);
  else if (key == "seed") cfg.seed = kv::to_u64(key, value);
  else return false;
  return true;
}

inline KeyValues model_key_values(const ModelConfig& cfg) {
  return {
      {"input_frames", std::to_string(cfg.input_frames)},
      {"output_frames", std::to_string(cfg.output_frames)},
      {"joints", std::to_string(cfg.joints)},
      {"blocks", std::to_string(cfg.blocks)},
      {"levels", std::to_string(cfg.levels)},
      {"fc_per_level", kv::from_int_list(cfg.fc_per_level)},
      {"use_dct", cfg.use_dct ? "1" : "0"},
      {"use_ln", cfg.use_ln ? "1" : "0"},
      {"seed", std::to_string(cfg.seed)},
  };
}

}  // namespace haarmodic

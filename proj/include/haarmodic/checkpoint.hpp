#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include "haarmodic/data.hpp"
#include "haarmodic/error.hpp"
#include "haarmodic/kv.hpp"
#include "haarmodic/model.hpp"

namespace haarmodic {

// A checkpoint is a directory with two files:
//
//   manifest.txt  key=value lines: format_version, precision, iteration, the
//                 model config keys, tensor_count, then one
//                 "tensor=<name> <rows> <cols>" line per tensor in
//                 Network::for_each_param order.
//   params.bin    every tensor in manifest order, row-major, as IEEE-754
//                 float64 little-endian. No header, no padding.
//
// float networks widen to float64 on save and narrow back exactly on load.

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointInfo {
  ModelConfig config;
  std::string precision;
  std::uint64_t iteration = 0;
  struct Tensor {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
  };
  std::vector<Tensor> tensors;
};

template <typename Scalar>
constexpr const char* precision_name() {
  return std::is_same_v<Scalar, float> ? "float" : "double";
}

template <typename Scalar>
void save_checkpoint(const Network<Scalar>& net, std::uint64_t iteration, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  KeyValues manifest = {{"format_version", std::to_string(kCheckpointFormatVersion)},
                        {"precision", precision_name<Scalar>()},
                        {"iteration", std::to_string(iteration)}};
  for (auto& kv : model_key_values(net.config)) manifest.push_back(kv);
  std::string blob;
  std::vector<std::pair<std::string, std::string>> tensors;
  net.for_each_param([&](const std::string& name, const Param<Scalar>& p) {
    tensors.emplace_back("tensor", name + " " + std::to_string(p.value.rows()) + " " +
                                       std::to_string(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(static_cast<double>(p.value.data()[i]));
      for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    }
  });
  manifest.emplace_back("tensor_count", std::to_string(tensors.size()));
  for (auto& t : tensors) manifest.push_back(std::move(t));
  detail::write_file(dir / "manifest.txt", format_key_values(manifest));
  detail::write_file(dir / "params.bin", blob);
}

inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir) {
  const KeyValues kvs = parse_key_values(detail::read_file(dir / "manifest.txt"));
  CheckpointInfo info;
  bool version_ok = false;
  for (const auto& [key, value] : kvs) {
    if (key == "format_version") {
      if (kv::to_int(key, value) != kCheckpointFormatVersion) {
        throw Error(ErrorCode::kInvalidArgument, "unsupported checkpoint format_version " + value);
      }
      version_ok = true;
    } else if (key == "precision") {
      info.precision = value;
    } else if (key == "iteration") {
      info.iteration = kv::to_u64(key, value);
    } else if (key == "tensor_count") {
      continue;
    } else if (key == "tensor") {
      std::istringstream in(value);
      CheckpointInfo::Tensor t;
      if (!(in >> t.name >> t.rows >> t.cols)) {
        throw Error(ErrorCode::kInvalidArgument, "malformed tensor line: " + value);
      }
      info.tensors.push_back(t);
    } else if (!apply_model_key(info.config, key, value)) {
      throw Error(ErrorCode::kUnknownKey, "checkpoint manifest key '" + key + "'");
    }
  }
  if (!version_ok) throw Error(ErrorCode::kInvalidArgument, "checkpoint manifest lacks format_version");
  return info;
}

/// Rebuilds the network described by the manifest and fills its tensors.
template <typename Scalar>
Network<Scalar> load_checkpoint(const std::filesystem::path& dir, std::uint64_t* iteration = nullptr) {
  const CheckpointInfo info = read_checkpoint_info(dir);
  Network<Scalar> net = build<Scalar>(info.config);
  const std::string blob = detail::read_file(dir / "params.bin");
  std::size_t at = 0;
  std::size_t index = 0;
  net.for_each_param_mut([&](const std::string& name, Param<Scalar>& p) {
    if (index >= info.tensors.size()) {
      throw Error(ErrorCode::kSizeMismatch, "checkpoint lists fewer tensors than the network has");
    }
    const auto& t = info.tensors[index++];
    if (t.name != name || t.rows != p.value.rows() || t.cols != p.value.cols()) {
      throw Error(ErrorCode::kSizeMismatch, "checkpoint tensor '" + t.name + "' does not match '" + name + "'");
    }
    const std::size_t bytes = static_cast<std::size_t>(p.value.size()) * 8;
    if (at + bytes > blob.size()) throw Error(ErrorCode::kTruncated, "params.bin is shorter than the manifest");
    for (Eigen::Index i = 0; i < p.value.size(); ++i, at += 8) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[at + b])) << (8 * b);
      p.value.data()[i] = static_cast<Scalar>(std::bit_cast<double>(bits));
    }
  });
  if (index != info.tensors.size()) throw Error(ErrorCode::kSizeMismatch, "checkpoint lists extra tensors");
  if (at != blob.size()) throw Error(ErrorCode::kSizeMismatch, "params.bin has trailing bytes");
  if (iteration != nullptr) *iteration = info.iteration;
  return net;
}

}  // namespace haarmodic

#pragma once

#include <stdexcept>
#include <string>

namespace haarmodic {

// Error classes. The CLI maps each one to a distinct process exit code.
enum class ErrorCode {
  kInvalidArgument,
  kInvalidDimension,
  kShapeMismatch,
  kCannotZoomOut,
  kBadMagic,
  kTruncated,
  kSizeMismatch,
  kNonFiniteData,
  kIo,
  kMissingDataset,
  kClipTooShort,
  kNonFiniteGradient,
  kNonFiniteLoss,
  kConfigMismatch,
  kUnknownKey,
  kDivisionGuard,
  kOutOfRange,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidDimension: return "invalid-dimension";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kCannotZoomOut: return "cannot-zoom-out";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kSizeMismatch: return "size-mismatch";
    case ErrorCode::kNonFiniteData: return "non-finite-data";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMissingDataset: return "missing-dataset";
    case ErrorCode::kClipTooShort: return "clip-too-short";
    case ErrorCode::kNonFiniteGradient: return "non-finite-gradient";
    case ErrorCode::kNonFiniteLoss: return "non-finite-loss";
    case ErrorCode::kConfigMismatch: return "config-mismatch";
    case ErrorCode::kUnknownKey: return "unknown-key";
    case ErrorCode::kDivisionGuard: return "division-guard";
    case ErrorCode::kOutOfRange: return "out-of-range";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace haarmodic

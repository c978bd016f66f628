#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace steer {

enum class ErrorCode {
  kInvalidInput,
  kDimensionMismatch,
  kIdMismatch,
  kDegenerate,      // zero-norm vector where a direction is required
  kRankDeficient,
  kOutOfRange,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kTrailingData,
  kIdCountMismatch,
  kKindMismatch,
  kParamCountMismatch,
  kParse,
  kIo,
  kDivergence,
  kUnreachable,     // a search target could not be met
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kIdMismatch: return "id-mismatch";
    case ErrorCode::kDegenerate: return "degenerate-input";
    case ErrorCode::kRankDeficient: return "rank-deficient";
    case ErrorCode::kOutOfRange: return "out-of-range";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kTrailingData: return "trailing-data";
    case ErrorCode::kIdCountMismatch: return "id-count-mismatch";
    case ErrorCode::kKindMismatch: return "kind-mismatch";
    case ErrorCode::kParamCountMismatch: return "param-count-mismatch";
    case ErrorCode::kParse: return "parse-error";
    case ErrorCode::kIo: return "io-error";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kUnreachable: return "unreachable-target";
  }
  return "unknown";
}

/// True for failures of the numerics (as opposed to bad inputs). The CLI
/// maps these to exit status 3 and everything else to 2.
constexpr bool is_numerical(ErrorCode code) {
  return code == ErrorCode::kRankDeficient || code == ErrorCode::kDivergence ||
         code == ErrorCode::kUnreachable;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace steer

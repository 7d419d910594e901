#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace panelclust {

enum class ErrorCode {
  kIo,
  kParse,
  kUnbalancedPanel,
  kDuplicateCell,
  kDegenerateWithin,
  kInvalidSpec,
  kEmptyGroup,
  kSingularDesign,
  kDegenerateStart,
  kInvalidConfig,
  kEstimationFailed,
  kDimension,
  kDomain,
  kInfeasibleKmax,
  kInvalidUse,
};

// Stable snake_case name used in machine-readable CLI errors.
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace panelclust

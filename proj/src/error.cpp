#include "stochlq/error.hpp"

namespace stochlq {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::BadDimensions: return "BadDimensions";
    case ErrorKind::NonSymmetricS: return "NonSymmetricS";
    case ErrorKind::NegativeS: return "NegativeS";
    case ErrorKind::UnboundedCoefficient: return "UnboundedCoefficient";
    case ErrorKind::ForcingNotSquareIntegrable: return "ForcingNotSquareIntegrable";
    case ErrorKind::MissingChild: return "MissingChild";
    case ErrorKind::SingularInnerMatrix: return "SingularInnerMatrix";
    case ErrorKind::StepSizeUnderflow: return "StepSizeUnderflow";
    case ErrorKind::LostPositivity: return "LostPositivity";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::MonotonicityViolated: return "MonotonicityViolated";
    case ErrorKind::NotStabilizable: return "NotStabilizable";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::IllConditionedFundamental: return "IllConditionedFundamental";
    case ErrorKind::UnstableClosedLoop: return "UnstableClosedLoop";
    case ErrorKind::NonConvexStep: return "NonConvexStep";
    case ErrorKind::NumericOverflow: return "NumericOverflow";
    case ErrorKind::NonPositiveAlpha: return "NonPositiveAlpha";
    case ErrorKind::InsufficientGrid: return "InsufficientGrid";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message, std::string key)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      key_(std::move(key)) {}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::BadDimensions:
    case ErrorKind::NonSymmetricS:
    case ErrorKind::NegativeS:
    case ErrorKind::UnboundedCoefficient:
    case ErrorKind::ForcingNotSquareIntegrable:
    case ErrorKind::NonPositiveAlpha:
      return 2;
    case ErrorKind::GridMismatch:
    case ErrorKind::MissingChild:
      return 4;
    default:
      return 3;
  }
}

}  // namespace stochlq

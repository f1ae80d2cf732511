#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stochlq {

enum class ErrorKind {
  ConfigError,
  BadDimensions,
  NonSymmetricS,
  NegativeS,
  UnboundedCoefficient,
  ForcingNotSquareIntegrable,
  MissingChild,
  SingularInnerMatrix,
  StepSizeUnderflow,
  LostPositivity,
  NoConvergence,
  MonotonicityViolated,
  NotStabilizable,
  GridMismatch,
  IllConditionedFundamental,
  UnstableClosedLoop,
  NonConvexStep,
  NumericOverflow,
  NonPositiveAlpha,
  InsufficientGrid,
};

std::string_view to_string(ErrorKind kind);

/// Every failure surfaced by the toolkit. `key` names the offending config key
/// or quantity when one is known.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string key = {});

  ErrorKind kind() const { return kind_; }
  const std::string& key() const { return key_; }

 private:
  ErrorKind kind_;
  std::string key_;
};

/// Exit-code class of an error kind: 2 validation, 3 solver, 4 verification.
int exit_code_for(ErrorKind kind);

}  // namespace stochlq

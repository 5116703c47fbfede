#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace elicit {

// Incompatible or malformed tensor shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value outside an operation's domain (negative log argument, NaN sort key,
// non-positive noise scale, ...). operand() names the offending input.
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what, std::size_t operand = 0)
      : std::domain_error(what), operand_(operand) {}
  std::size_t operand() const noexcept { return operand_; }

 private:
  std::size_t operand_;
};

// Invalid user-facing configuration (plan, study, CLI arguments).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A covariance or correlation matrix that is not positive definite.
class DecompositionError : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace elicit

#pragma once

#include <stdexcept>
#include <string>

namespace qpmp {

/// Input that violates a documented precondition or invariant.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Configuration rejected before anything is integrated (stability guards,
/// unknown keys, constraint violations found by the loader).
class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

/// A weight matrix that cannot be inverted reliably (condition number
/// above 1e12).
class IllConditionedError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Integration produced non-finite values or an unrecoverable state.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long step = -1)
      : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

/// A density matrix collapsed to zero trace during projection.
class DegenerateStateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qpmp

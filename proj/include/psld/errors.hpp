#pragma once

#include <stdexcept>
#include <string>

namespace psld {

// Malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical breakdown during a computation (CLI exit code 3): non-finite
// states, singular factorizations, solver step underflow.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace psld

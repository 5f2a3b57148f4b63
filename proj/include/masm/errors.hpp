#pragma once

#include <stdexcept>
#include <string>

namespace masm {

/// Error categories map onto CLI exit codes: config/usage -> 1,
/// numeric failure -> 2, IO failure -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Shape-contract violations inside tensor ops. A kind of numeric failure.
class ShapeError : public NumericError {
 public:
  using NumericError::NumericError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace masm

#pragma once

#include <stdexcept>
#include <string>

namespace stylespace {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or malformed architecture descriptions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or degenerate statistics. The CLI maps this to exit code 3.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Corrupt or unsupported files (PNG, checkpoints, directory layouts).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace stylespace

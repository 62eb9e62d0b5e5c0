#pragma once

#include <stdexcept>
#include <string>

namespace hvc {

// Base class for all library errors. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape / axis mismatches.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated input data (IDX files, checkpoints, matrices).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or other numeric failures during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace hvc

#pragma once

#include <stdexcept>
#include <string>

namespace cseg {

// Base class for every error raised by the library. Subclasses map onto the
// CLI exit codes (config -> 1, data -> 2, everything else -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (corpus files, labels, vocabularies).
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor shape incompatibility.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cseg

#pragma once

#include <stdexcept>
#include <string>

namespace ciem {

// Base for every error raised by the library. The CLI maps these onto exit
// codes: NumericError -> 3, everything else -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (zero-sized layer, bad lambda, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dimension mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or out-of-range input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Operation applied to an object in the wrong stage.
class StateError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ciem

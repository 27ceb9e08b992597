#pragma once

#include <stdexcept>
#include <string>

namespace du2 {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or resolution ratios do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf reached a tensor, or a numeric routine cannot proceed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its admissible range (t <= 0, delta <= 0, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File-system or format failure; the message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace du2

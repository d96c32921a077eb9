#pragma once

#include <stdexcept>
#include <string>

namespace speedmode {

/// Input data that cannot be used (bad file contents, empty trips, ...).
/// The CLI maps this family to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structural problem with a file: missing columns, bad header.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Truncated or otherwise damaged binary container.
class CorruptionError : public DataError {
 public:
  using DataError::DataError;
};

/// Tensor shapes that do not compose.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced or consumed by a numeric routine.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace speedmode

#pragma once

#include <stdexcept>
#include <string>

namespace mind {

// Shape/argument violations in tensor and layer code.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed, truncated or corrupt files and configs.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failures: NaN loss, stale caches, failed gradient checks.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mind

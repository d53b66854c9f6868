#pragma once

#include <stdexcept>
#include <string>

namespace gradxkg {

// Shape disagreement between operands, bad axis, index out of range.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// NaN/Inf produced by an op, divergence during training, non-finite gradients.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input files, vocabulary mismatches, missing artifacts.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Inconsistent configuration values (synthetic generator, training, eval).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace gradxkg

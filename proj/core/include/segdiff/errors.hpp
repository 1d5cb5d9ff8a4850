#pragma once

#include <stdexcept>
#include <string>

namespace segdiff {

// Invalid configuration or arguments that a caller could have checked up front.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf or an ill-conditioned step (e.g. dividing by a vanishing alpha).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// More entities than the palette has cells.
class CapacityError : public std::length_error {
 public:
  explicit CapacityError(const std::string& what) : std::length_error(what) {}
};

}  // namespace segdiff

#pragma once

#include <stdexcept>
#include <string>

namespace pfb {

// Bad arguments, malformed files, contract violations. CLI maps this to exit code 1.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Incompatible tensor shapes; a flavor of validation failure.
struct ShapeError : ValidationError {
  explicit ShapeError(const std::string& what) : ValidationError(what) {}
};

// Non-finite values or diverging numerics. CLI maps this to exit code 2.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pfb

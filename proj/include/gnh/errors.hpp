#pragma once

#include <stdexcept>
#include <string>

namespace gnh {

// Error taxonomy shared by the library and the CLI. The CLI maps each class
// to a distinct exit code (see tools/gnh_main.cpp), so keep the hierarchy flat.

// Malformed bytes or headers in a file we were asked to read.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension or index mismatches between caller-supplied objects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A requested allocation would exceed the configured budget.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A matrix that must be positive definite is not.
class DefinitenessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (overflow, divergence).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gnh

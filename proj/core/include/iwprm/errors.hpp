#pragma once

#include <stdexcept>
#include <string>

namespace iwprm {

// Bad inputs, malformed files, contract violations. CLI maps these to exit 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values produced by numeric code. CLI maps these to exit 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace iwprm

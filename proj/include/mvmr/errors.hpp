#pragma once

#include <stdexcept>
#include <string>

namespace mvmr {

// Bad inputs: malformed files, dimension mismatches, invalid parameters.
// The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failures: singular systems, unidentified directions.
// The CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mvmr

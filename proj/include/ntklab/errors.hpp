#pragma once

#include <stdexcept>
#include <string>

namespace ntklab {

// Bad user input: wrong vector length, invalid widths, malformed config.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : ValidationError {
  using ValidationError::ValidationError;
};

// Exhaustive enumeration refused because the path count exceeds the cap.
struct EnumerationLimitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A documented precondition or postcondition did not hold.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace ntklab

#pragma once

#include <stdexcept>
#include <string>

namespace nstrokes {

// Exit-code families used by the command line driver:
// UsageError -> 1, DataError -> 2, NumericalError -> 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : DataError {
  using DataError::DataError;
};

}  // namespace nstrokes

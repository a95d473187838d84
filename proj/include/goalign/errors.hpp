#pragma once

#include <stdexcept>
#include <string>

namespace goalign {

// File/format/content problems: missing files, version mismatches, bad configs.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite losses and other numeric failures.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace goalign

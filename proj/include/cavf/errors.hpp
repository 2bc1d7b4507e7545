#pragma once

#include <stdexcept>
#include <string>

namespace cavf {

// Incompatible matrix/vector shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain (non-positive temperature, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Statistic undefined for the given data (constant inputs, too few samples).
struct DegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid user configuration (even median window, bad DFT length, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated file contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File written by an incompatible format version.
struct VersionError : FormatError {
  using FormatError::FormatError;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cavf

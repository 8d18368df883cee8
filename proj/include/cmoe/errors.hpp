#pragma once

#include <stdexcept>
#include <string>

namespace cmoe {

// Invalid configuration, unknown keys, or violated preconditions on inputs.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed data: shape mismatches, non-normalized distributions, bad files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during optimization.
class TrainingFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cmoe

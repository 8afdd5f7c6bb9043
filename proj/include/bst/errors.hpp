#pragma once

#include <stdexcept>
#include <string>

namespace bst {

// Bad input data or arguments (CLI exit code 2).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inconsistent configuration values (CLI exit code 2).
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// File system failures (CLI exit code 1).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures while running an otherwise valid request (CLI exit code 1).
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bst

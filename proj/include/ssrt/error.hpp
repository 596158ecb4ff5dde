#pragma once

#include <stdexcept>
#include <string>

namespace ssrt {

/// Bad user input: malformed files, failed validation, inconsistent config.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while executing an otherwise valid request (I/O, network, numerics).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ssrt

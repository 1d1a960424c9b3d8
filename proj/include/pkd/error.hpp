#pragma once

#include <stdexcept>
#include <string>

namespace pkd {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes disagree at a graph node.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced, divergence, or a numerical precondition violated.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad user input: missing files, malformed config, invalid hyper-parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An internal consistency check (certificate, accounting) failed.
class CheckFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace pkd

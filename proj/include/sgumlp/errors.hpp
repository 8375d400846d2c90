#pragma once

#include <stdexcept>
#include <string>

namespace sgumlp {

// Base class for everything this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or parameter extents disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (even kernel, odd split axis, bad fraction, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Labels or sample values violate their contract.
class DataError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened, parsed, or has the wrong length.
class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint container rejected (magic, version, shape audit).
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Metric undefined for the given confusion matrix.
class MetricError : public Error {
 public:
  using Error::Error;
};

// An op produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or parameters.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace sgumlp

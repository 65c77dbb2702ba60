#pragma once

#include <stdexcept>
#include <string>

namespace nwm {

// Base of every error the library throws. Each subclass maps onto one
// CLI exit code (see tools/nwmark.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A numeric argument outside its domain (k > n, nc0 <= 0, rect out of bounds).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during training, or an undefined metric (zero-norm NC).
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint load failures. The subclass tells which validation failed.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointManifestError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace nwm

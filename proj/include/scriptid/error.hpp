#pragma once

#include <stdexcept>
#include <string>

namespace scriptid {

/// Base class for every error raised by the library. The CLI maps the
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied a value outside the operation's domain.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Tensor or layer shapes do not line up.
class InvalidShape : public Error {
 public:
  using Error::Error;
};

/// Mode/parameter combination that cannot run (e.g. train-mode batch norm on one sample).
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Operation called out of order or without its prerequisites.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared; the message names the offending tensor or layer.
class NumericFault : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint errors.
class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

class BadMagic : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class UnsupportedVersion : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class IntegrityError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ShapeMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class MissingTensor : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace scriptid

#pragma once

#include <stdexcept>
#include <string>

namespace shmguard {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not compose for a primitive or layer.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value became NaN/Inf, or a training loss diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the recording tape (backward on an empty tape, non-scalar output).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration (bad parameter, unknown key, out-of-range label).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure or malformed file contents.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public IoError {
 public:
  using IoError::IoError;
};

/// File contents are truncated or malformed.
class CorruptDataError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace shmguard

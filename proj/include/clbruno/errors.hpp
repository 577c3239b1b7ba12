#pragma once

#include <stdexcept>
#include <string>

namespace clbruno {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A (task, label) pair or task id that was never registered.
class UnknownConditionError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed or non-finite input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Label sets of tasks differ where a shared label space is required.
class LabelSpaceError : public Error {
 public:
  using Error::Error;
};

/// An outlier threshold was calibrated against a different model.
class StaleThresholdError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Model file errors. Each corruption mode maps to its own type.
class LoadError : public Error {
 public:
  using Error::Error;
};
class MagicError : public LoadError {
 public:
  using LoadError::LoadError;
};
class ChecksumError : public LoadError {
 public:
  using LoadError::LoadError;
};
class TruncationError : public LoadError {
 public:
  using LoadError::LoadError;
};
class VersionError : public LoadError {
 public:
  using LoadError::LoadError;
};
class FormatError : public LoadError {
 public:
  using LoadError::LoadError;
};

}  // namespace clbruno

#pragma once

#include <stdexcept>
#include <string>

namespace circuits {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes do not line up. `dimension()` names the offending extent.
class ShapeError : public Error {
 public:
  ShapeError(std::string dimension, const std::string& message)
      : Error(message), dimension_(std::move(dimension)) {}
  const std::string& dimension() const noexcept { return dimension_; }

 private:
  std::string dimension_;
};

/// A serialized artifact is malformed (bad magic, bad header, trailing bytes).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A serialized artifact was written by an incompatible format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A serialized artifact ends before its declared payload.
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Arguments violate an operation's preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A model graph, layer, kernel or target reference is invalid.
class GraphError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Misuse of an evaluation context (e.g. a second reverse sweep).
class ContextError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace circuits

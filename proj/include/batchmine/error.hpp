#pragma once

#include <stdexcept>
#include <string>

namespace batchmine {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented contract (bad config, invariant breach).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its bytes do not follow the expected layout.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Filesystem failure: cannot open, read or write.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace batchmine

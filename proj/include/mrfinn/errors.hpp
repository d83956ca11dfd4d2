#pragma once

#include <stdexcept>
#include <string>

namespace mrfinn {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-supplied values (tissue parameters, schedules, grids, configs).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};
class InvalidParameter : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};
class InvalidSchedule : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};
class GridError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};
class SplitError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Dimension disagreement between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Persisted data that cannot be read back.
class FormatError : public Error {
 public:
  using Error::Error;
};
class IoError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class SizeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// NaN/Inf during training or evaluation, or an undefined statistic.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A gradient request against a cache produced by an older parameter state.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace mrfinn

#pragma once

#include <stdexcept>
#include <string>

namespace flute {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or parameter structures disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the gradient tape (wrong tape, non-scalar loss, double backward).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// A loss, gradient or parameter became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or domain specification.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Corpus or episode request that the data cannot satisfy.
class DataError : public Error {
 public:
  using Error::Error;
};

/// File-format or filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace flute

#pragma once

#include <stdexcept>
#include <string>

namespace mrt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not fit the primitive they were passed to.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, token ids, configs).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf surfaced where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mrt

#pragma once

#include <stdexcept>
#include <string>

namespace coherent {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller input: malformed files, mismatched shapes, violated
// preconditions. The CLI maps these to exit status 2.
class InputError : public Error {
 public:
  using Error::Error;
};

class FormatError : public InputError {
 public:
  using InputError::InputError;
};

class DimensionError : public InputError {
 public:
  using InputError::InputError;
};

// A value does not fit the requested encoding (e.g. label > 255 at 8 bit).
class RangeError : public InputError {
 public:
  using InputError::InputError;
};

class PreconditionError : public InputError {
 public:
  using InputError::InputError;
};

// A type invariant was violated while constructing a value.
// The CLI maps these to exit status 1.
class InvariantError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require_same_size(int h0, int w0, int h1, int w1, const char* what) {
  if (h0 != h1 || w0 != w1) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(h0) + "x" +
                         std::to_string(w0) + " vs " + std::to_string(h1) + "x" +
                         std::to_string(w1) + ")");
  }
}

}  // namespace detail
}  // namespace coherent

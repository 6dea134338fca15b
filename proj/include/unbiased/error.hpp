#pragma once

#include <stdexcept>
#include <string>

namespace unbiased {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Shapes or indices that do not fit together.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Inputs outside an operation's domain (negative variance, bad label, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Factorizations, solves or series that fail numerically.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Malformed files.
class FormatError : public Error {
public:
  using Error::Error;
};

inline void require(bool ok, const std::string &what) {
  if (!ok) throw DomainError(what);
}

inline void require_dims(bool ok, const std::string &what) {
  if (!ok) throw DimensionError(what);
}

} // namespace unbiased

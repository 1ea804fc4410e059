#pragma once

#include <stdexcept>
#include <string>

namespace vprir {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A triangular operator with a zero leading coefficient.
class SingularOperator : public Error {
 public:
  using Error::Error;
};

// Filter has roots outside the unit disk, so its inverse recursion diverges.
class InstabilityError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Non-positive variance or scale where the model needs a strictly positive one.
class DomainError : public Error {
 public:
  using Error::Error;
};

// The energy decay curve never reaches the lower end of the fit range.
class InsufficientDecay : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace vprir

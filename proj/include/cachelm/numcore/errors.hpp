#pragma once

#include <stdexcept>
#include <string>

namespace cachelm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where a finite value is required, or an invalid distribution.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or insufficient input text.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Checkpoints or vocabularies that cannot be used together.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

/// Loss was non-finite at a finite-difference probe point.
class ProbeError : public Error {
 public:
  using Error::Error;
};

}  // namespace cachelm

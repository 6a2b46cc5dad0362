#pragma once

#include <stdexcept>
#include <string>

namespace discrim {

// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity was produced or supplied.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or hyperparameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace discrim

#pragma once

#include <stdexcept>
#include <string>

namespace blindrep {

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError -> 1, DataError (and subtypes) -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor/dimension mismatches.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

// Malformed files; messages carry 1-based line numbers.
class ParseError : public DataError {
 public:
  using DataError::DataError;
};

// Out-of-range or inconsistent call arguments.
class ArgumentError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values where finite arithmetic is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace blindrep

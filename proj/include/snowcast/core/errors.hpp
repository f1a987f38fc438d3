#pragma once

#include <stdexcept>
#include <string>

namespace snowcast {

// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not compose (matmul inner extents, feature counts, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A configuration value outside its legal domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A forward op produced NaN or Inf from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Metric is undefined for the given series (constant or zero-mean).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Input files: missing columns, bad cells, duplicate dates.
class DataError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

// Unknown model name, fold index, or persisted artifact.
class LookupError : public Error {
 public:
  using Error::Error;
};

// Training failed outright (diverged before any usable epoch, ...).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace snowcast

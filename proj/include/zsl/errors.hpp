#pragma once

#include <stdexcept>
#include <string>

namespace zsl {

// Base of every error thrown by the library. The CLI maps each subclass
// onto its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or arity mismatch between tensors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, divergence, or an ill-conditioned solve.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Linear solve stayed singular after the allowed regularisation retries.
class ConditioningError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad configuration values or an infeasible generator setup.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; the message carries the location.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Words and tokens (or scores and gold labels) do not line up.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// Inputs violate a semantic requirement (e.g. missing token labels).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Sequence longer than the encoder accepts.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Index outside the configured encoder bounds.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Checkpoint written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace zsl

#pragma once

#include <stdexcept>
#include <string>

namespace saintplus {

// Violated precondition of an operation (bad argument values, misuse of a graph).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Tensor shapes that do not line up.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Index outside of a table or vocabulary.
class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Invalid or incomplete configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric that is not defined for the given input (e.g. AUC with one class).
class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure reading or validating a persisted artifact.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during optimization (NaN loss, non-finite gradient).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace saintplus

#pragma once

#include <stdexcept>
#include <string>

namespace cvr {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN or non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model / batcher / run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Feature name or schema mismatch.
class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Checkpoint cannot be used for the requested warmstart.
class IncompatibleCheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file or wire payload.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric has no eligible input (e.g. mAP over zero groups).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace cvr

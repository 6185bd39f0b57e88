// SPDX-License-Identifier: Apache-2.0
//
// Error types shared by every module. Each maps onto one failure class so
// callers (and the CLI exit-code mapping) can dispatch on type.

#pragma once

#include <stdexcept>
#include <string>

namespace xmf {

/// Shapes or lengths that do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A scalar argument outside its admissible range (sigma <= 0, p > 1, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data that is well-shaped but unusable, e.g. a zero-norm feature row.
class DegenerateInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced inside a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed serialized data (bad magic, truncation, bad JSON line).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A benchmark buffer would exceed its configured byte budget.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged.
class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, int epoch, int step)
      : NumericError(what), epoch_(epoch), step_(step) {}
  int epoch() const noexcept { return epoch_; }
  int step() const noexcept { return step_; }

 private:
  int epoch_;
  int step_;
};

}  // namespace xmf

// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_ERRORS_HPP_
#define DEPTHRNN_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace depthrnn {

// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Token id, class index, or layer index out of range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Caller violated an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf produced, or training diverged.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, schema violation, or inconsistent checkpoint.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Weight mutation detected where weights must stay frozen.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace depthrnn

#endif  // DEPTHRNN_ERRORS_HPP_

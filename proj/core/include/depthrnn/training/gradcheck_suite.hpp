// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_TRAINING_GRADCHECK_SUITE_HPP_
#define DEPTHRNN_TRAINING_GRADCHECK_SUITE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "depthrnn/numerics/grad_check.hpp"

namespace depthrnn::training {

// Targets: constraint_gate, correction_gate, dgdpu_step, gru_step and the
// cross-entropy of a 3-layer depth recurrence (cell and backbone tensors).
// Cell targets also differentiate with respect to m and v.
struct GradcheckTarget {
  std::string name;
  std::size_t instances = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  GradCheckResult worst;
  std::size_t worst_dim = 0;
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  double tolerance = 1e-5;
  std::vector<GradcheckTarget> targets;

  double max_rel_error() const;
  bool passed() const { return max_rel_error() <= tolerance; }
  std::string to_json() const;
};

struct GradcheckOptions {
  std::size_t instances = 20;
  std::vector<std::size_t> dims = {2, 4, 8};
  GradCheckOptions check = ridders_options();
  double tolerance = 1e-5;
};

// `instances` seeded draws per target and width.
GradcheckReport run_gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options = {});

}  // namespace depthrnn::training

#endif  // DEPTHRNN_TRAINING_GRADCHECK_SUITE_HPP_

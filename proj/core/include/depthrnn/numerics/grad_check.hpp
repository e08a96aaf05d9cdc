// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_NUMERICS_GRAD_CHECK_HPP_
#define DEPTHRNN_NUMERICS_GRAD_CHECK_HPP_

#include <functional>
#include <string>
#include <vector>

#include "depthrnn/numerics/tape.hpp"

namespace depthrnn {

// Builds a scalar loss on the supplied tape, binding parameters with
// Tape::parameter so their gradients can be read back.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

struct GradCheckOptions {
  double step = 1e-6;
  // 2: (f(p+h) - f(p-h)) / 2h.
  // 4: (f(p-2h) - 8f(p-h) + 8f(p+h) - f(p+2h)) / 12h.
  // 0: Ridders extrapolation of 2-point estimates (steps shrinking by 1.4),
  //    started at step * 10^(-k/2), k = 0..10; keeps the estimate with the
  //    smallest error bound, which includes roundoff and a kink term.
  int stencil = 2;
  // Denominator floor of the relative error.
  double floor = 1e-8;
};

// Ridders settings used by the gradient-check suite.
inline GradCheckOptions ridders_options() { return {1e-1, 0, 1e-8}; }

// Compares reverse-mode gradients with central differences, coordinate by
// coordinate. The per-coordinate error is |a - n| / max(floor, |a| + |n|).
// Parameter values are restored on return; their grad buffers are
// overwritten. Throws NumericError if the loss is not finite and
// ContractError on an unknown stencil.
GradCheckResult grad_check(const LossBuilder& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options = {});

}  // namespace depthrnn

#endif  // DEPTHRNN_NUMERICS_GRAD_CHECK_HPP_

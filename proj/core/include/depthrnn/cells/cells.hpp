// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_CELLS_CELLS_HPP_
#define DEPTHRNN_CELLS_CELLS_HPP_

#include <cstddef>
#include <string_view>
#include <vector>

#include "depthrnn/numerics/ops.hpp"
#include "depthrnn/numerics/rng.hpp"

// Two-input one-output recurrent cells over depth. Every cell maps the
// current block delta m and the previous recurrent state v to the next state.
// Inputs are a single vector [d] or a stack of independent rows [n x d];
// matrices act on the right (x . W), so W : [in x out].
namespace depthrnn::cells {

enum class CellInit {
  kXavier,
  // Xavier everywhere except W_e2, whose entries are made non-negative so the
  // correction gate starts above one half. See calibrate_correction_gate.
  kNearVanilla,
};

// Dual-gated depth propagation unit. No biases.
struct DgDpuParams {
  Parameter w_a;   // [d x d]    constraint gate
  Parameter w_e1;  // [2d x d]   correction gate, first projection
  Parameter w_e2;  // [d x 1]    correction gate, to a scalar

  static DgDpuParams zeros(std::size_t d);
  static DgDpuParams init(std::size_t d, Rng& rng, CellInit scheme = CellInit::kXavier);

  std::size_t dim() const { return w_a.value.dim(0); }
  std::size_t parameter_count() const;
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // Throws DimensionError on inconsistent shapes, NumericError on NaN/Inf.
  void validate() const;
};

// Cho-style GRU with input m and state v.
struct GruParams {
  Parameter w_z, w_r, w_h;  // [d x d], applied to m
  Parameter u_z, u_r, u_h;  // [d x d], applied to v
  Parameter b_z, b_r, b_h;  // [d]

  static GruParams zeros(std::size_t d);
  static GruParams init(std::size_t d, Rng& rng);

  std::size_t dim() const { return w_z.value.dim(0); }
  std::size_t parameter_count() const;
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void validate() const;
};

struct BoundDgDpu {
  Var w_a, w_e1, w_e2;
};
struct BoundGru {
  Var w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h;
};

// Records the parameters once on `tape`; reuse the result for every layer so
// all applications share the same leaves.
BoundDgDpu bind(Tape& tape, DgDpuParams& params);
BoundGru bind(Tape& tape, GruParams& params);
// Constant views; nothing is differentiated.
BoundDgDpu bind(Tape& tape, const DgDpuParams& params);
BoundGru bind(Tape& tape, const GruParams& params);

struct ConstraintResult {
  Var g_a;      // same shape as m
  Var c_tilde;  // same shape as m
};

struct CorrectionResult {
  Var g_e;     // one scalar per row
  Var v_next;  // same shape as m
};

// Gates that a cell does not have are left as invalid Vars.
struct StepResult {
  Var v_next;
  Var g_a;
  Var g_e;
  Var c_tilde;
};

// g_a = sigmoid((m - v) . W_a);  c~ = g_a * v + (1 - g_a) * m.
ConstraintResult constraint_gate(Var m, Var v, const BoundDgDpu& p);

// g_e = sigmoid(relu([m, v] . W_e1) . W_e2);  v' = g_e m + (1 - g_e) c~.
CorrectionResult correction_gate(Var m, Var v, Var c_tilde, const BoundDgDpu& p);

StepResult dgdpu_step(Var m, Var v, const BoundDgDpu& p);

Var gru_step(Var m, Var v, const BoundGru& p);

enum class Ablation { kConstraintOnly, kCorrectionOnly };

// kConstraintOnly returns c~; kCorrectionOnly blends m with v directly
// (v stands in for c~).
StepResult ablated_step(Ablation kind, Var m, Var v, const BoundDgDpu& p);


// Plain-value copy of a step's gate activations.
struct CellTrace {
  Tensor g_a;      // empty if the cell has no constraint gate
  Tensor g_e;      // empty if the cell has no correction gate
  Tensor c_tilde;  // empty if the cell has no constraint gate
};

CellTrace trace_of(const StepResult& step);

}  // namespace depthrnn::cells

#endif  // DEPTHRNN_CELLS_CELLS_HPP_

// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/cells/cells.hpp"

#include <cmath>
#include <string>

#include "depthrnn/errors.hpp"

namespace depthrnn::cells {
namespace {

void check_shape(const Parameter& p, const Shape& expected) {
  if (p.value.shape() != expected) {
    throw DimensionError("parameter '" + p.name + "' has shape " +
                         shape_string(p.value.shape()) + ", expected " +
                         shape_string(expected));
  }
  if (!p.value.all_finite()) {
    throw NumericError("parameter '" + p.name + "' holds non-finite values");
  }
}

void check_pair(const char* op, Var m, Var v, std::size_t d) {
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  if (mv.shape() != vv.shape() || mv.rank() < 1 || mv.rank() > 2 || mv.cols() != d) {
    throw DimensionError(std::string(op) + ": inputs " + shape_string(mv.shape()) +
                         " and " + shape_string(vv.shape()) +
                         " must agree with cell width " + std::to_string(d));
  }
}

std::size_t width(const BoundDgDpu& p) { return p.w_a.value().dim(0); }

}  // namespace

DgDpuParams DgDpuParams::zeros(std::size_t d) {
  DgDpuParams p;
  p.w_a = Parameter("dgdpu.w_a", Tensor(Shape{d, d}));
  p.w_e1 = Parameter("dgdpu.w_e1", Tensor(Shape{2 * d, d}));
  p.w_e2 = Parameter("dgdpu.w_e2", Tensor(Shape{d, 1}));
  return p;
}

DgDpuParams DgDpuParams::init(std::size_t d, Rng& rng, CellInit scheme) {
  DgDpuParams p = zeros(d);
  p.w_a.value = xavier_uniform(d, d, rng);
  p.w_e1.value = xavier_uniform(2 * d, d, rng);
  p.w_e2.value = xavier_uniform(d, 1, rng);
  if (scheme == CellInit::kNearVanilla) {
    for (double& x : p.w_e2.value.values()) x = std::abs(x);
  }
  return p;
}

std::size_t DgDpuParams::parameter_count() const {
  return w_a.value.size() + w_e1.value.size() + w_e2.value.size();
}

std::vector<Parameter*> DgDpuParams::parameters() { return {&w_a, &w_e1, &w_e2}; }
std::vector<const Parameter*> DgDpuParams::parameters() const {
  return {&w_a, &w_e1, &w_e2};
}

void DgDpuParams::validate() const {
  const std::size_t d = w_a.value.rank() == 2 ? w_a.value.dim(0) : 0;
  check_shape(w_a, {d, d});
  check_shape(w_e1, {2 * d, d});
  check_shape(w_e2, {d, 1});
}

GruParams GruParams::zeros(std::size_t d) {
  GruParams p;
  p.w_z = Parameter("gru.w_z", Tensor(Shape{d, d}));
  p.w_r = Parameter("gru.w_r", Tensor(Shape{d, d}));
  p.w_h = Parameter("gru.w_h", Tensor(Shape{d, d}));
  p.u_z = Parameter("gru.u_z", Tensor(Shape{d, d}));
  p.u_r = Parameter("gru.u_r", Tensor(Shape{d, d}));
  p.u_h = Parameter("gru.u_h", Tensor(Shape{d, d}));
  p.b_z = Parameter("gru.b_z", Tensor(Shape{d}));
  p.b_r = Parameter("gru.b_r", Tensor(Shape{d}));
  p.b_h = Parameter("gru.b_h", Tensor(Shape{d}));
  return p;
}

GruParams GruParams::init(std::size_t d, Rng& rng) {
  GruParams p = zeros(d);
  for (Parameter* w : {&p.w_z, &p.w_r, &p.w_h, &p.u_z, &p.u_r, &p.u_h}) {
    w->value = xavier_uniform(d, d, rng);
  }
  return p;
}

std::size_t GruParams::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

std::vector<Parameter*> GruParams::parameters() {
  return {&w_z, &w_r, &w_h, &u_z, &u_r, &u_h, &b_z, &b_r, &b_h};
}
std::vector<const Parameter*> GruParams::parameters() const {
  return {&w_z, &w_r, &w_h, &u_z, &u_r, &u_h, &b_z, &b_r, &b_h};
}

void GruParams::validate() const {
  const std::size_t d = w_z.value.rank() == 2 ? w_z.value.dim(0) : 0;
  for (const Parameter* w : {&w_z, &w_r, &w_h, &u_z, &u_r, &u_h}) check_shape(*w, {d, d});
  for (const Parameter* b : {&b_z, &b_r, &b_h}) check_shape(*b, {d});
}

BoundDgDpu bind(Tape& tape, DgDpuParams& params) {
  params.validate();
  return {tape.parameter(params.w_a), tape.parameter(params.w_e1),
          tape.parameter(params.w_e2)};
}

BoundGru bind(Tape& tape, GruParams& params) {
  params.validate();
  return {tape.parameter(params.w_z), tape.parameter(params.w_r),
          tape.parameter(params.w_h), tape.parameter(params.u_z),
          tape.parameter(params.u_r), tape.parameter(params.u_h),
          tape.parameter(params.b_z), tape.parameter(params.b_r),
          tape.parameter(params.b_h)};
}

BoundDgDpu bind(Tape& tape, const DgDpuParams& params) {
  params.validate();
  return {tape.constant_ref(params.w_a.value), tape.constant_ref(params.w_e1.value),
          tape.constant_ref(params.w_e2.value)};
}

BoundGru bind(Tape& tape, const GruParams& params) {
  params.validate();
  auto c = [&](const Parameter& p) { return tape.constant_ref(p.value); };
  return {c(params.w_z), c(params.w_r), c(params.w_h), c(params.u_z), c(params.u_r),
          c(params.u_h), c(params.b_z), c(params.b_r), c(params.b_h)};
}

ConstraintResult constraint_gate(Var m, Var v, const BoundDgDpu& p) {
  check_pair("constraint_gate", m, v, width(p));
  Var g_a = ops::sigmoid(ops::matmul(m - v, p.w_a));
  Var c_tilde = ops::lerp(m, v, g_a);
  return {g_a, c_tilde};
}

CorrectionResult correction_gate(Var m, Var v, Var c_tilde, const BoundDgDpu& p) {
  check_pair("correction_gate", m, v, width(p));
  check_pair("correction_gate", m, c_tilde, width(p));
  Var hidden = ops::relu(ops::matmul(ops::concat(m, v), p.w_e1));
  Var g_e = ops::sigmoid(ops::matmul(hidden, p.w_e2));
  return {g_e, ops::lerp(c_tilde, m, g_e)};
}

StepResult dgdpu_step(Var m, Var v, const BoundDgDpu& p) {
  ConstraintResult constraint = constraint_gate(m, v, p);
  CorrectionResult correction = correction_gate(m, v, constraint.c_tilde, p);
  return {correction.v_next, constraint.g_a, correction.g_e, constraint.c_tilde};
}

Var gru_step(Var m, Var v, const BoundGru& p) {
  const std::size_t d = p.w_z.value().dim(0);
  check_pair("gru_step", m, v, d);
  auto gate = [&](Var w, Var u, Var b, Var state) {
    return ops::add_row(ops::matmul(m, w) + ops::matmul(state, u), b);
  };
  Var z = ops::sigmoid(gate(p.w_z, p.u_z, p.b_z, v));
  Var r = ops::sigmoid(gate(p.w_r, p.u_r, p.b_r, v));
  Var candidate = ops::tanh(gate(p.w_h, p.u_h, p.b_h, r * v));
  return ops::one_minus(z) * v + z * candidate;
}

StepResult ablated_step(Ablation kind, Var m, Var v, const BoundDgDpu& p) {
  switch (kind) {
    case Ablation::kConstraintOnly: {
      ConstraintResult c = constraint_gate(m, v, p);
      return {c.c_tilde, c.g_a, Var(), c.c_tilde};
    }
    case Ablation::kCorrectionOnly: {
      CorrectionResult c = correction_gate(m, v, v, p);
      return {c.v_next, Var(), c.g_e, Var()};
    }
  }
  throw ContractError("ablated_step: unknown ablation kind " +
                      std::to_string(static_cast<int>(kind)));
}

CellTrace trace_of(const StepResult& step) {
  CellTrace t;
  t.g_a = step.g_a.valid() ? step.g_a.value() : Tensor(Shape{0});
  t.g_e = step.g_e.valid() ? step.g_e.value() : Tensor(Shape{0});
  t.c_tilde = step.c_tilde.valid() ? step.c_tilde.value() : Tensor(Shape{0});
  return t;
}

}  // namespace depthrnn::cells

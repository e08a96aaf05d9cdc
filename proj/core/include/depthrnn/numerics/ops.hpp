// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_NUMERICS_OPS_HPP_
#define DEPTHRNN_NUMERICS_OPS_HPP_

#include <cstddef>
#include <span>
#include <string_view>

#include "depthrnn/numerics/tape.hpp"

// Differentiable primitives. Rank-1 operands act as a single row wherever an
// op works on matrices; outputs keep the rank of the left operand.
namespace depthrnn::ops {

enum class Activation { kSigmoid, kRelu, kTanh, kGelu };

std::string_view activation_name(Activation kind);

// [m x k] . [k x n] -> [m x n]. A rank-1 `a` of length k yields rank-1 [n].
Var matmul(Var a, Var b);
Var transpose(Var a);

// Element-wise, identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

// a [rows x n] + bias [n] on every row.
Var add_row(Var a, Var bias);
// scale * a + shift, element-wise.
Var affine(Var a, double scale, double shift);
inline Var one_minus(Var a) { return affine(a, -1.0, 1.0); }
// Row r of `a` multiplied by the scalar s[r]; `s` holds exactly rows(a)
// elements.
Var scale_rows(Var a, Var s);

// (1 - t) * a + t * b via std::lerp: exact at t = 0, t = 1 and when a == b,
// and bounded by a and b for t in [0, 1]. `t` is either element-wise (same
// shape as a) or one scalar per row of a.
Var lerp(Var a, Var b, Var t);

Var activation(Activation kind, Var x);
inline Var sigmoid(Var x) { return activation(Activation::kSigmoid, x); }
inline Var relu(Var x) { return activation(Activation::kRelu, x); }
inline Var tanh(Var x) { return activation(Activation::kTanh, x); }
inline Var gelu(Var x) { return activation(Activation::kGelu, x); }

// Joins along the last axis; leading extents must agree.
Var concat(Var a, Var b);
Var concat(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
// Row r of a rank-2 tensor as a rank-1 vector.
Var row(Var a, std::size_t r);
Var reshape(Var a, Shape shape);
// Rows `ids` of a rank-2 table, stacked into [ids.size() x cols].
Var gather_rows(Var table, std::span<const std::size_t> ids);

// Row-wise layer normalization with learned gain and offset.
Var layer_norm(Var x, Var gain, Var offset, double eps = 1e-5);
// Row-wise softmax of a square score matrix with entries above the diagonal
// excluded (causal mask).
Var causal_softmax(Var scores);

// -log softmax(logits)[target] for rank-1 logits.
Var softmax_cross_entropy(Var logits, std::size_t target);
// Mean cross-entropy over the rows of [n x V] logits whose target is >= 0.
// Rows with a negative target contribute nothing.
Var masked_cross_entropy(Var logits, std::span<const int> targets);

Var sum(Var a);

}  // namespace depthrnn::ops

namespace depthrnn {

inline Var operator+(Var a, Var b) { return ops::add(a, b); }
inline Var operator-(Var a, Var b) { return ops::sub(a, b); }
inline Var operator*(Var a, Var b) { return ops::mul(a, b); }

// Numerically stable softmax of a plain vector (no tape).
Tensor softmax(std::span<const double> logits);

}  // namespace depthrnn

#endif  // DEPTHRNN_NUMERICS_OPS_HPP_

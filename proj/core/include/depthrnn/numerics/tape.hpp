// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_NUMERICS_TAPE_HPP_
#define DEPTHRNN_NUMERICS_TAPE_HPP_

#include <cstddef>
#include <functional>
#include <vector>

#include "depthrnn/numerics/tensor.hpp"

namespace depthrnn {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode autodiff record. Entries are appended in evaluation order, so
// every input of entry k is an entry < k. A tape is confined to one thread.
class Tape {
 public:
  // Propagates the gradient held by entry `self` into its inputs.
  using BackwardFn = std::function<void(Tape& tape, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Records a non-owning view. `value` must outlive the tape.
  Var constant_ref(const Tensor& value);
  // Differentiable leaf owned by the tape; read its gradient with grad().
  Var input(Tensor value);
  // Differentiable leaf viewing `value` (which must outlive the tape). Its
  // gradient stays on the tape; read it with grad().
  Var leaf_ref(const Tensor& value);
  // Leaf bound to `param`. backward() accumulates into param.grad when
  // param.requires_grad, otherwise the leaf is treated as a constant.
  Var parameter(Parameter& param);

  // Appends an op output. `backward` is dropped when no input requires grad.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse. Throws
  // ContractError unless `loss` holds exactly one element.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const;
  const Tensor& value(Var v) const { return value(v.id()); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient accumulated at an entry; a zero tensor if backward never
  // reached it.
  Tensor grad(Var v) const;
  // Mutable accumulator used by backward functions (lazily zero-filled).
  Tensor& grad_buffer(std::size_t id);

  std::size_t size() const { return nodes_.size(); }
  std::size_t last_backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;

    const Tensor& value() const { return ref != nullptr ? *ref : owned; }
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::size_t backward_visits_ = 0;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace depthrnn

#endif  // DEPTHRNN_NUMERICS_TAPE_HPP_

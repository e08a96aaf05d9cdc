// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/numerics/tape.hpp"

#include "depthrnn/errors.hpp"

namespace depthrnn {

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.ref = &value;
  return push(std::move(n));
}

Var Tape::input(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::leaf_ref(const Tensor& value) {
  Node n;
  n.ref = &value;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& param) {
  Node n;
  n.ref = &param.value;
  n.requires_grad = param.requires_grad;
  n.param = param.requires_grad ? &param : nullptr;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs,
                 BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  for (std::size_t id : inputs) {
    if (nodes_[id].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const { return nodes_[id].value(); }

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == n.value().size() && n.grad.shape() == n.value().shape()) {
    return n.grad;
  }
  return Tensor(n.value().shape());
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value().shape() ||
      n.grad.size() != n.value().size()) {
    n.grad = Tensor(n.value().shape());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: foreign Var");
  if (value(loss).size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(value(loss).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor(Shape{0});
  backward_visits_ = 0;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    ++backward_visits_;
    if (n.backward) n.backward(*this, k);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.size() == 0) continue;
    Tensor& target = n.param->grad;
    if (target.shape() != n.param->value.shape()) {
      target = Tensor(n.param->value.shape());
    }
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += n.grad[i];
  }
}

}  // namespace depthrnn

// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#include "emma/numerics/tape.hpp"

#include <string>

#include "emma/error.hpp"

namespace emma {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant contains non-finite entries");
  nodes_.push_back(Node{std::move(value), false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("variable contains non-finite entries");
  nodes_.push_back(Node{std::move(value), true, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(std::string_view name, Tensor value, std::span<const Var> parents, Backward backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string(name) + " produced a non-finite value " + shape_str(value.shape()));
  }
  bool needs = false;
  for (const auto& p : parents) {
    if (p.tape != this) throw Error(std::string(name) + ": operand recorded on a different tape");
    needs = needs || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : Backward{}});
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var root) {
  if (root.tape != this) throw Error("backward: root belongs to a different tape");
  auto& r = nodes_[root.id];
  if (r.value.size() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(r.value.shape()));
  if (!r.requires_grad) return;
  r.value.mutable_grad()[0] += 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || !node.value.has_grad()) continue;
    node.backward(*this, i);
  }
}

Var Binder::operator()(const Tensor& param) {
  if (auto it = bound_.find(&param); it != bound_.end()) return it->second;
  Var v = is_trainable(param) ? tape_.variable(param) : tape_.constant(param);
  bound_.emplace(&param, v);
  return v;
}

std::span<const double> Binder::grad(const Tensor& param) const {
  auto it = bound_.find(&param);
  if (it == bound_.end()) return {};
  return tape_.grad_of(it->second);
}

}  // namespace emma

// Copyright 2026 The EMMA Connector Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "emma/numerics/tensor.hpp"

namespace emma {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order; backward() replays them in reverse,
/// accumulating into each node's gradient buffer. A node only carries a
/// backward closure when at least one of its parents requires a gradient, so a
/// tape built entirely from constants is a plain forward evaluator.
class Tape {
 public:
  // Receives the tape and the id of the node whose gradient is being propagated.
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Records the result of an op. `name` is used in the non-finite error message.
  Var record(std::string_view name, Tensor value, std::span<const Var> parents, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient buffer of a node, allocated as zeros on first access.
  std::span<double> grad(std::size_t id) { return nodes_[id].value.mutable_grad(); }
  std::span<const double> grad_of(Var v) const { return nodes_[v.id].value.grad(); }

  // Seeds d(root)/d(root) = 1; root must hold a single element.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

/// Binds named model parameters onto a tape, once per tape.
///
/// Parameters registered as trainable become gradient-carrying leaves; all
/// others are recorded as constants.
class Binder {
 public:
  explicit Binder(Tape& tape) : tape_(tape) {}

  void set_trainable(const Tensor& param) { trainable_.insert(&param); }
  bool is_trainable(const Tensor& param) const { return trainable_.count(&param) != 0; }

  Var operator()(const Tensor& param);

  // Gradient of a bound trainable parameter after backward(); empty if it was never bound.
  std::span<const double> grad(const Tensor& param) const;

  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  std::unordered_set<const Tensor*> trainable_;
  std::unordered_map<const Tensor*, Var> bound_;
};

}  // namespace emma

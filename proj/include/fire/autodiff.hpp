/*
 * firereg : joint synthesis and registration networks
 *
 * Copyright 2026 The firereg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fire/tensor.hpp"

namespace fire {

/// A named learnable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  // Accumulation buffer written by Tape::backward even through const access.
  mutable Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape())
      grad = Tensor<T>(value.shape());
    else
      grad.fill(T(0));
  }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/// Ordered record of differentiable operations.
///
/// Nodes are appended in execution order; backward() visits them in exact
/// reverse order. A tape built with record=false keeps values only, which is
/// what inference uses.
template <typename T>
class Tape {
 public:
  /// Propagates the output gradient of node `self` into its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Input with no gradient.
  Var<T> constant(Tensor<T> v) { return add_node(std::move(v), false, nullptr, nullptr); }

  /// Input whose gradient is kept on the tape after backward().
  Var<T> leaf(Tensor<T> v) { return add_node(std::move(v), record_, nullptr, nullptr); }

  /// Learnable input; backward() accumulates into p.grad. Repeated calls with
  /// the same parameter return the same node.
  Var<T> param(const Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    Var<T> v = add_node(p.value, record_, nullptr, &p);
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  /// Appends the result of an operation. `inputs` decide whether the output
  /// needs a gradient; `fn` is dropped when none do.
  Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn, const char* op) {
    if (!value.all_finite()) throw NumericalError(std::string(op) + ": non-finite output");
    bool rg = false;
    for (const auto& in : inputs) rg = rg || requires_grad(in.id);
    return add_node(std::move(value), rg, rg ? std::move(fn) : BackwardFn{}, nullptr);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

  /// Reverse sweep from a scalar loss. Parameter gradients are added to
  /// Parameter::grad, so several backward passes accumulate.
  void backward(Var<T> loss) {
    if (!record_) throw std::logic_error("backward: tape was built without recording");
    if (loss.tape != this) throw std::logic_error("backward: loss belongs to another tape");
    if (value(loss.id).size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + to_string(value(loss.id).shape()));
    if (!requires_grad(loss.id)) return;
    grad(loss.id)[0] += T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto& pg = n.param->grad;
        if (pg.shape() != n.value.shape()) pg = Tensor<T>(n.value.shape());
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    const Parameter<T>* param = nullptr;
  };

  Var<T> add_node(Tensor<T> v, bool rg, BackwardFn fn, const Parameter<T>* p) {
    nodes_.push_back(Node{std::move(v), Tensor<T>{}, rg && record_, record_ ? std::move(fn) : BackwardFn{}, p});
    return {this, nodes_.size() - 1};
  }

  bool record_;
  std::deque<Node> nodes_;  // stable addresses: values are referenced across push()
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

}  // namespace fire

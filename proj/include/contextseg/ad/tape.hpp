#pragma once

// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
// node vector is already topologically sorted; backward walks it in reverse
// and visits each node at most once.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "contextseg/ad/tensor.hpp"
#include "contextseg/error.hpp"

namespace cseg::ad {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  // Accumulated by Tape::backward; logically a side buffer of the parameter.
  mutable Tensor<T> grad;

  void zero_grad() const {
    if (grad.shape() != value.shape())
      grad = Tensor<T>(value.shape());
    else
      grad.fill(T{});
  }
};

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) {
    Node n;
    n.own = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  // Binds a parameter by reference. Repeated binds on one tape share a node.
  Var<T> parameter(const Parameter<T>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return {this, it->second};
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    bound_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  // Appends an op result. `fn` is kept only when some input requires grad.
  Var<T> record(std::string_view op, Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
    for (T v : value.values())
      if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite value produced by " + std::string(op));
    Node n;
    n.own = std::move(value);
    for (const auto& in : inputs) n.requires_grad = n.requires_grad || nodes_.at(in.id).requires_grad;
    if (n.requires_grad && grad_enabled_) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.own;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool requires_grad(Var<T> v) const { return requires_grad(v.id); }

  // Gradient flowing into node `id`; valid inside a backward rule for `id`.
  const Tensor<T>& grad(std::size_t id) const { return nodes_.at(id).grad; }

  bool has_grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.param ? !n.param->grad.empty() : !n.grad.empty();
  }

  // Zero-initialised on first use. Parameter nodes write straight into the
  // parameter's own gradient buffer.
  Tensor<T>& grad_accumulator(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.param) {
      if (n.param->grad.shape() != n.param->value.shape()) n.param->grad = Tensor<T>(n.param->value.shape());
      return n.param->grad;
    }
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (!grad_enabled_) throw Error("backward on a tape with gradients disabled");
    if (value(loss.id).size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(value(loss.id).shape()));
    if (!nodes_.at(loss.id).requires_grad) return;
    grad_accumulator(loss.id)[0] += T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor<T> own;
    const Tensor<T>* external = nullptr;
    const Parameter<T>* param = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;  // deque: value references stay valid as nodes are appended
  std::unordered_map<const Parameter<T>*, std::size_t> bound_;
};

}  // namespace cseg::ad

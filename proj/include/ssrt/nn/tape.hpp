#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ssrt/nn/params.hpp"
#include "ssrt/nn/tensor.hpp"

namespace ssrt::nn {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode gradient recorder (Wengert list).
///
/// Every op pushes one node holding its forward value and, when any input
/// requires a gradient, a closure that propagates the node's gradient to its
/// inputs. `backward()` walks the list in reverse and finally accumulates leaf
/// gradients into the bound Parameters. With `grad_enabled == false` no
/// closures are stored and parameters are referenced without copying.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(1024); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> v) {
    Node n;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to a parameter; one leaf per parameter per tape.
  Var<T> parameter(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    param_nodes_[&p] = nodes_.size() - 1;
    return {this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, Backward bw) {
    bool needs = false;
    if (grad_enabled_) {
      for (const auto& p : parents) needs = needs || nodes_[p.id].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, Backward bw) {
    bool needs = false;
    if (grad_enabled_) {
      for (const auto& p : parents) needs = needs || nodes_[p.id].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated (zero) on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != value(id).size()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  std::size_t size() const { return nodes_.size(); }

  /// Backpropagates from a scalar root and adds leaf gradients to their Parameters.
  void backward(Var<T> root, T seed = T{1}) {
    if (!grad_enabled_) throw RuntimeFailure("backward() on a tape without gradients");
    if (value(root.id).size() != 1) throw ValidationError("backward() root must be a scalar");
    if (!nodes_[root.id].requires_grad) return;
    grad(root.id)[0] += seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto& pg = n.param->grad;
        if (pg.size() != n.grad.size()) pg = Tensor<T>(n.param->value.shape());
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

}  // namespace ssrt::nn

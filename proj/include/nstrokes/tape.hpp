#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "nstrokes/tensor.hpp"

namespace nstrokes {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Every op appends one node holding its output value and
/// a closure that pushes the node's gradient into its inputs. Parameter nodes
/// alias an external Tensor and accumulate straight into its grad buffer, so
/// several tapes in a row accumulate a mini-batch gradient.
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  Var constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var parameter(Tensor& param) {
    Node n;
    n.external = &param;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  /// Aliases an external tensor without tracking its gradient.
  Var reference(const Tensor& t) {
    Node n;
    n.external = const_cast<Tensor*>(&t);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward back) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(back));
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward back) {
    if (!value.all_finite())
      throw NumericalError("non-finite value produced by op at tape position " +
                           std::to_string(nodes_.size()));
    Node n;
    n.owned = std::move(value);
    for (Var v : inputs)
      if (v.valid() && node(v).needs_grad) n.needs_grad = true;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(Var v) const {
    const Node& n = node(v);
    return n.external ? *n.external : n.owned;
  }

  bool needs_grad(Var v) const { return v.valid() && node(v).needs_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first access.
  Buffer& grad(Var v) {
    Node& n = node(v);
    if (n.external) return n.external->grad();
    if (n.grad.size() != n.owned.size()) n.grad.assign(n.owned.size(), 0.0f);
    return n.grad;
  }

  bool has_grad(Var v) const {
    const Node& n = node(v);
    return n.external ? n.external->has_grad() : !n.grad.empty();
  }

  void backward(Var root, float seed = 1.0f) {
    auto& g = grad(root);
    std::fill(g.begin(), g.end(), seed);
    sweep(root);
  }

  void backward(Var root, std::span<const float> seed) {
    auto& g = grad(root);
    if (seed.size() != g.size()) throw ShapeError("backward seed size mismatch");
    std::copy(seed.begin(), seed.end(), g.begin());
    sweep(root);
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    Tensor* external = nullptr;
    Buffer grad;
    Backward back;
    bool needs_grad = false;
  };

  Node& node(Var v) { return nodes_.at(static_cast<size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<size_t>(v.id)); }

  // Once a node's closure has run nothing earlier on the tape refers to it,
  // so its value and gradient are released during the sweep.
  void sweep(Var root) {
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.external) continue;
      if (n.back && !n.grad.empty()) {
        if (!all_finite(n.grad))
            throw NumericalError("non-finite gradient at tape position " + std::to_string(id));
        n.back(*this, Var{id});
      }
      n.grad = {};
      n.back = nullptr;
      n.owned = Tensor();
    }
  }

  std::deque<Node> nodes_;
};

}  // namespace nstrokes

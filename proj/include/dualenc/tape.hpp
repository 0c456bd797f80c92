#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "dualenc/tensor.hpp"

namespace dualenc::ad {

template <class T>
class TapeT;

// One recorded operation. Creation order on the tape is a topological order,
// so the backward sweep is a single reverse pass.
template <class T>
struct NodeT {
  const char* op = "";
  TensorT<T> storage;               // owned output (or owned constant)
  const TensorT<T>* src = nullptr;  // where the value lives; &storage unless a bound leaf
  TensorT<T>* grad_sink = nullptr;  // external tensor receiving the gradient (trainable leaves)
  std::vector<T> adjoint;           // d loss / d output, allocated lazily
  std::vector<NodeT*> inputs;
  std::function<void(NodeT&)> backward;
  bool needs_grad = false;

  const TensorT<T>& val() const { return *src; }
};

// Returns the adjoint buffer of a node, or nullptr when no gradient is
// needed along that edge. Allocates zeros on first use.
template <class T>
inline std::vector<T>* adj(NodeT<T>* n) {
  if (!n->needs_grad) return nullptr;
  if (n->adjoint.empty()) n->adjoint.assign(static_cast<std::size_t>(n->val().size()), T(0));
  return &n->adjoint;
}

template <class T>
struct ValueT {
  TapeT<T>* tape = nullptr;
  NodeT<T>* node = nullptr;

  const TensorT<T>& val() const { return node->val(); }
  const Shape& shape() const { return node->val().shape; }
  const std::vector<T>& data() const { return node->val().data; }
  T scalar() const {
    if (node->val().size() != 1)
      throw std::invalid_argument("scalar: value has shape " + shape_str(node->val().shape));
    return node->val().data[0];
  }
};

template <class T>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  // Leaf bound to an external tensor; participates in backward iff the
  // tensor requires grad. The tensor must outlive the tape.
  ValueT<T> leaf(TensorT<T>& t) {
    NodeT<T>& n = fresh("leaf");
    n.src = &t;
    n.needs_grad = t.requires_grad;
    if (t.requires_grad) {
      if (t.grad.size() != t.data.size())
        throw std::logic_error("leaf: requires_grad tensor has no grad buffer");
      n.grad_sink = &t;
      n.backward = [](NodeT<T>& self) {
        auto& g = self.grad_sink->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.adjoint[i];
      };
    }
    return {this, &n};
  }

  // Read-only leaf; never receives gradient. Safe on shared frozen models.
  ValueT<T> view(const TensorT<T>& t) {
    NodeT<T>& n = fresh("view");
    n.src = &t;
    return {this, &n};
  }

  // Tape-owned constant (inputs, zero states, bag-of-words vectors).
  ValueT<T> constant(TensorT<T> t) {
    NodeT<T>& n = fresh("const");
    n.storage = std::move(t);
    n.src = &n.storage;
    return {this, &n};
  }

  NodeT<T>& record(const char* op, TensorT<T> out, std::vector<NodeT<T>*> inputs) {
    check_finite(out, op);
    NodeT<T>& n = fresh(op);
    n.storage = std::move(out);
    n.src = &n.storage;
    n.inputs = std::move(inputs);
    for (auto* in : n.inputs) n.needs_grad = n.needs_grad || in->needs_grad;
    return n;
  }

  // Reverse sweep from a scalar loss. Each node is visited exactly once in
  // reverse creation (= reverse topological) order; the graph is consumed.
  void backward(ValueT<T> loss) {
    if (loss.tape != this) throw std::logic_error("backward: loss from another tape");
    if (consumed_) throw std::runtime_error("backward: graph already consumed by an earlier backward");
    if (loss.node->val().size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(loss.node->val().shape));
    loss.node->adjoint.assign(1, T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      NodeT<T>& n = **it;
      if (n.adjoint.empty()) continue;
      if (n.backward) n.backward(n);
      n.adjoint.clear();
      n.backward = nullptr;
    }
    consumed_ = true;
  }

  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  NodeT<T>& fresh(const char* op) {
    nodes_.push_back(std::make_unique<NodeT<T>>());
    nodes_.back()->op = op;
    return *nodes_.back();
  }

  std::vector<std::unique_ptr<NodeT<T>>> nodes_;
  bool consumed_ = false;
};

using Value = ValueT<float>;
using Tape = TapeT<float>;

}  // namespace dualenc::ad

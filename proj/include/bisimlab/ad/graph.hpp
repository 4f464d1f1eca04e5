#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bisimlab/ad/tensor.hpp"

namespace bisimlab::ad {

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  int id = -1;

  const Tensor<Scalar>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape; }
  Index size() const { return value().size(); }
};

/// Tape of recorded operations. Nodes are stored in creation order, which is
/// a topological order, so backward is a single reverse sweep. Node values
/// are never mutated once recorded.
template <typename Scalar>
class Graph {
 public:
  using T = Tensor<Scalar>;
  /// Receives the gradient of the node's output and accumulates into parents
  /// through grad_slot().
  using BackwardFn = std::function<void(const T& grad_out)>;

  explicit Graph(std::uint64_t seed = 0) : rng_(seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Trainable input; its gradient is reported by leaf_grads() under `name`.
  Var<Scalar> leaf(const std::string& name, T value) {
    for (const auto& [n, id] : leaves_)
      if (n == name) throw InvalidInput("Graph: duplicate leaf name '" + name + "'");
    value.requires_grad = true;
    const int id = push(std::move(value), true, nullptr);
    leaves_.emplace_back(name, id);
    return {this, id};
  }

  /// Input that never receives a gradient.
  Var<Scalar> constant(T value) {
    value.requires_grad = false;
    return {this, push(std::move(value), false, nullptr)};
  }

  /// Adds an operation output. The backward rule is dropped when no parent
  /// needs a gradient.
  Var<Scalar> record(T value, const std::vector<int>& parents, BackwardFn fn) {
    bool needs = false;
    for (int p : parents) {
      if (p < 0 || p >= static_cast<int>(nodes_.size())) throw InternalError("Graph::record: bad parent id");
      needs = needs || nodes_[static_cast<std::size_t>(p)].needs_grad;
    }
    return {this, push(std::move(value), needs, needs ? std::move(fn) : nullptr)};
  }

  const T& value(int id) const { return node(id).value; }
  bool needs_grad(int id) const { return node(id).needs_grad; }

  /// Gradient accumulator of a node, zero-initialized on first use, or null
  /// when the node does not take part in differentiation.
  T* grad_slot(int id) {
    Node& n = node(id);
    if (!n.needs_grad) return nullptr;
    if (!n.grad) n.grad = T(n.value.shape, Scalar(0));
    return &*n.grad;
  }

  /// Reverse sweep from a scalar loss. Each node's rule runs at most once.
  void backward(const Var<Scalar>& loss) {
    if (loss.graph != this) throw InvalidInput("backward: loss belongs to another graph");
    if (value(loss.id).size() != 1)
      throw InvalidInput("backward: loss must be scalar, got shape " + shape_str(value(loss.id).shape));
    for (auto& n : nodes_) n.grad.reset();
    if (!node(loss.id).needs_grad) return;
    grad_slot(loss.id)->data.setConstant(Scalar(1));
    for (int id = loss.id; id >= 0; --id) {
      Node& n = node(id);
      if (n.backward && n.grad) n.backward(*n.grad);
    }
  }

  const T* grad(const Var<Scalar>& v) const {
    const Node& n = node(v.id);
    return n.grad ? &*n.grad : nullptr;
  }

  /// Gradients of every leaf after backward(); leaves the loss does not
  /// depend on get zero tensors.
  std::map<std::string, T> leaf_grads() const {
    std::map<std::string, T> out;
    for (const auto& [name, id] : leaves_) {
      const Node& n = node(id);
      out.emplace(name, n.grad ? *n.grad : T(n.value.shape, Scalar(0)));
    }
    return out;
  }

  std::vector<std::string> leaf_names() const {
    std::vector<std::string> names;
    for (const auto& [name, id] : leaves_) names.push_back(name);
    return names;
  }

  std::size_t n_nodes() const { return nodes_.size(); }
  Rng& rng() { return rng_; }

 private:
  struct Node {
    T value;
    bool needs_grad = false;
    BackwardFn backward;
    std::optional<T> grad;
  };

  int push(T value, bool needs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), needs, std::move(fn), std::nullopt});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Node& node(int id) {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw InvalidInput("Graph: unknown node id");
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Node& node(int id) const { return const_cast<Graph*>(this)->node(id); }

  // deque keeps element references stable while the tape grows.
  std::deque<Node> nodes_;
  std::vector<std::pair<std::string, int>> leaves_;
  Rng rng_;
};

}  // namespace bisimlab::ad

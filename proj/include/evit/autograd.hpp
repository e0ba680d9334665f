#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evit/tensor.hpp"

namespace evit {

template <class T>
class Graph;

/// Handle to a value recorded on a Graph. Cheap to copy.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
};

/// Define-by-run reverse-mode tape. One Graph is one evaluation context and
/// must not be shared between threads.
///
/// Nodes are appended during the forward pass; ids are therefore already in
/// topological order and `backward` walks them once in reverse.
template <class T>
class Graph {
 public:
  // Accumulates input gradients given the node's output gradient and value.
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad, const Tensor<T>& out_value)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> v) { return push("constant", std::move(v), false, {}); }
  Var<T> variable(Tensor<T> v) { return push("variable", std::move(v), true, {}); }

  /// Append the result of an op. The backward rule is dropped when no input
  /// needs a gradient.
  Var<T> record(std::string op, Tensor<T> out, std::vector<std::size_t> inputs, BackwardFn fn) {
    if (!out.all_finite()) throw NumericError(op + ": produced a non-finite value");
    bool req = false;
    for (std::size_t i : inputs) req = req || nodes_.at(i).requires_grad;
    Var<T> v = push(std::move(op), std::move(out), req, std::move(inputs));
    if (req) nodes_.back().backward = std::move(fn);
    return v;
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last `backward` root with respect to `v` (zeros if unreached).
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad ? *n.grad : Tensor<T>(n.value.shape());
  }

  /// Add `g` into the gradient slot of node `id`. No-op for constants.
  void accumulate(std::size_t id, const Tensor<T>& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (!n.grad) {
      n.value.require_same_shape(g, "gradient for " + n.op);
      n.grad = g;
    } else {
      *n.grad += g;
    }
  }

  /// Reverse sweep from `root`, seeded with ones (sum semantics for non-scalars).
  void backward(Var<T> root) {
    for (auto& n : nodes_) n.grad.reset();
    nodes_.at(root.id).grad = Tensor<T>::ones(nodes_.at(root.id).value.shape());
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad || !n.backward) continue;
      Tensor<T> g = *n.grad;
      if (fault_ && n.op == fault_->first) {
        for (auto& v : g.data()) v *= fault_->second;
      }
      n.backward(*this, g, n.value);
    }
  }

  /// Count of multiply-accumulates performed by conv2d and matmul so far.
  std::uint64_t macs() const noexcept { return macs_; }
  void add_macs(std::uint64_t m) noexcept { macs_ += m; }

  /// Test hook: scale the upstream gradient of every node named `op` by
  /// `factor` during backward, simulating a broken gradient rule.
  void inject_gradient_fault(std::string op, T factor) { fault_ = std::make_pair(std::move(op), factor); }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::optional<Tensor<T>> grad;
  };

  Var<T> push(std::string op, Tensor<T> v, bool req, std::vector<std::size_t> inputs) {
    nodes_.push_back(Node{std::move(op), std::move(v), req, std::move(inputs), {}, std::nullopt});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::uint64_t macs_ = 0;
  std::optional<std::pair<std::string, T>> fault_;
};

}  // namespace evit

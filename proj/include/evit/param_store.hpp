#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "evit/autograd.hpp"

namespace evit {

/// Ordered collection of named trainable tensors with one gradient slot each.
/// Names are hierarchical, dot-separated (`stage3.block1.esa.q.weight`).
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
  };

  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    Tensor<T> g(value.shape());
    entries_.push_back(Entry{std::move(name), std::move(value), std::move(g)});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& value(const std::string& name) { return entries_[lookup(name)].value; }
  const Tensor<T>& value(const std::string& name) const { return entries_[lookup(name)].value; }
  Tensor<T>& grad(const std::string& name) { return entries_[lookup(name)].grad; }
  const Tensor<T>& grad(const std::string& name) const { return entries_[lookup(name)].grad; }

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(T{0});
  }

  // Sets every parameter value (not gradient) to zero.
  void zero_values() {
    for (auto& e : entries_) e.value.fill(T{0});
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Binds store parameters onto one graph on first use, so each parameter
/// becomes exactly one leaf node per forward pass.
template <class T>
class ParamBinder {
 public:
  ParamBinder(Graph<T>& graph, const ParamStore<T>& store, bool trainable = false)
      : graph_(graph), store_(store), trainable_(trainable) {}

  Var<T> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Tensor<T>& v = store_.value(name);
    Var<T> var = trainable_ ? graph_.variable(v) : graph_.constant(v);
    bound_.emplace(name, var);
    return var;
  }

  /// Pre-bind `name` to an existing graph variable.
  void bind(const std::string& name, Var<T> v) { bound_[name] = v; }

  Graph<T>& graph() noexcept { return graph_; }
  const std::map<std::string, Var<T>>& bound() const noexcept { return bound_; }

  /// Add the graph's gradients for every bound parameter into `store`.
  void collect_grads(ParamStore<T>& store) const {
    for (const auto& [name, var] : bound_) store.grad(name) += graph_.grad(var);
  }

 private:
  Graph<T>& graph_;
  const ParamStore<T>& store_;
  bool trainable_;
  std::map<std::string, Var<T>> bound_;
};

/// Parameter factory shared by the model builders.
template <class T>
class ParamInit {
 public:
  explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

  // Uniform in ±1/sqrt(fan_in).
  void weight(ParamStore<T>& store, const std::string& name, Shape shape, std::size_t fan_in) {
    const T bound = T{1} / std::sqrt(static_cast<T>(fan_in));
    store.add(name, Tensor<T>::uniform(std::move(shape), -bound, bound, rng_));
  }
  void zeros(ParamStore<T>& store, const std::string& name, Shape shape) {
    store.add(name, Tensor<T>::zeros(std::move(shape)));
  }
  void ones(ParamStore<T>& store, const std::string& name, Shape shape) {
    store.add(name, Tensor<T>::ones(std::move(shape)));
  }
  void uniform(ParamStore<T>& store, const std::string& name, Shape shape, T lo, T hi) {
    store.add(name, Tensor<T>::uniform(std::move(shape), lo, hi, rng_));
  }

  std::mt19937_64& rng() noexcept { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Overwrite every parameter with uniform noise; used to move gradient checks
/// away from the symmetric initial point (unit norms, zero biases).
template <class T, class Rng>
void randomize(ParamStore<T>& store, Rng& rng, T lo = T(-0.5), T hi = T(0.5)) {
  for (auto& e : store.entries()) e.value = Tensor<T>::uniform(e.value.shape(), lo, hi, rng);
}

/// Add U(-spread, spread) to every rank-1 parameter (biases, norm affines)
/// and leave weight tensors at their fan-in-scaled init. Keeps activations
/// O(1) at any width, which finite differences need.
template <class T, class Rng>
void jitter_affine(ParamStore<T>& store, Rng& rng, T spread = T(0.5)) {
  for (auto& e : store.entries()) {
    if (e.value.shape().size() != 1) continue;
    e.value += Tensor<T>::uniform(e.value.shape(), -spread, spread, rng);
  }
}

}  // namespace evit

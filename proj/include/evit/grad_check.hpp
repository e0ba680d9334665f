#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "evit/autograd.hpp"
#include "evit/ops.hpp"
#include "evit/param_store.hpp"

namespace evit {

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every element; otherwise at most this many sampled elements per input.
  std::size_t max_samples_per_input = 0;
  std::uint64_t seed = 0;
  // Simulated broken gradient rule (see Graph::inject_gradient_fault).
  std::string fault_op;
  double fault_factor = 1.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

struct NamedInput {
  std::string name;
  Tensor<double> value;
};

/// Compare reverse-mode gradients with central differences.
///
/// `f(graph, vars)` must return a single-element Var. The error per element is
/// |analytic - numeric| / max(1, |analytic|, |numeric|); the report carries the
/// maximum and where it occurred.
template <class Fn>
GradCheckReport grad_check(Fn&& f, std::vector<NamedInput> inputs, const GradCheckOptions& opt = {}) {
  if (!(opt.eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");

  auto eval = [&](Graph<double>& g, std::vector<Var<double>>& vars) {
    vars.clear();
    for (auto& in : inputs) vars.push_back(g.variable(in.value));
    Var<double> out = f(g, std::span<const Var<double>>(vars));
    if (out.value().numel() != 1) throw std::invalid_argument("grad_check: function must return a scalar");
    const double v = out.value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
    return out;
  };

  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    if (!opt.fault_op.empty()) g.inject_gradient_fault(opt.fault_op, opt.fault_factor);
    std::vector<Var<double>> vars;
    Var<double> out = eval(g, vars);
    g.backward(out);
    for (auto& v : vars) analytic.push_back(g.grad(v));
  }

  std::mt19937_64 rng(opt.seed);
  GradCheckReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::size_t n = inputs[k].value.numel();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (opt.max_samples_per_input && n > opt.max_samples_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_samples_per_input);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      double& x = inputs[k].value[i];
      const double orig = x;
      std::vector<Var<double>> vars;
      x = orig + opt.eps;
      double fp, fm;
      {
        Graph<double> g;
        fp = eval(g, vars).value()[0];
      }
      x = orig - opt.eps;
      {
        Graph<double> g;
        fm = eval(g, vars).value()[0];
      }
      x = orig;
      const double numeric = (fp - fm) / (2 * opt.eps);
      const double a = analytic[k][i];
      if (!std::isfinite(a)) throw NumericError("grad_check: non-finite analytic gradient for " + inputs[k].name);
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++rep.checked;
      if (rep.worst_input.empty() || err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_input = inputs[k].name;
        rep.worst_index = i;
      }
    }
  }
  return rep;
}

/// Single-input form: returns the maximum relative error only.
template <class Fn>
double grad_check(Fn&& f, const Tensor<double>& x, double eps) {
  GradCheckOptions opt;
  opt.eps = eps;
  auto wrapped = [&](Graph<double>& g, std::span<const Var<double>> v) { return f(g, v[0]); };
  return grad_check(wrapped, {NamedInput{"x", x}}, opt).max_rel_error;
}

/// Check a layer with respect to its input and every parameter in `store`.
/// `f(graph, input, binder)` builds the forward pass; its output is summed.
template <class Fn>
GradCheckReport grad_check_layer(Fn&& f, const Tensor<double>& x, const ParamStore<double>& store,
                                 const GradCheckOptions& opt = {}) {
  std::vector<NamedInput> inputs{{"input", x}};
  for (const auto& e : store.entries()) inputs.push_back({e.name, e.value});
  auto wrapped = [&](Graph<double>& g, std::span<const Var<double>> v) {
    ParamBinder<double> binder(g, store);
    for (std::size_t i = 1; i < v.size(); ++i) binder.bind(inputs[i].name, v[i]);
    return ops::sum(f(g, v[0], binder));
  };
  return grad_check(wrapped, inputs, opt);
}

}  // namespace evit

#pragma once

// Differentiable wrappers: each op computes its forward value with the
// kernels and records the matching gradient rule on the graph.

#include <algorithm>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "evit/autograd.hpp"
#include "evit/kernels.hpp"

namespace evit::ops {

using kernels::Activation;
using kernels::Conv2dOptions;

namespace detail {
template <class T>
Graph<T>& graph_of(Var<T> a) {
  if (!a.graph) throw std::logic_error("variable is not attached to a graph");
  return *a.graph;
}
template <class T>
void same_graph(Var<T> a, Var<T> b) {
  if (a.graph != b.graph) throw std::logic_error("variables belong to different graphs");
}
}  // namespace detail

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = detail::graph_of(a);
  a.value().require_same_shape(b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  const std::size_t ia = a.id, ib = b.id;
  return g.record("add", std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    gr.accumulate(ia, dy);
    gr.accumulate(ib, dy);
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = detail::graph_of(a);
  a.value().require_same_shape(b.value(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return g.record("mul", std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    const Tensor<T>& av = gr.value(ia);
    const Tensor<T>& bv = gr.value(ib);
    Tensor<T> da(dy.shape()), db(dy.shape());
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      da[i] = dy[i] * bv[i];
      db[i] = dy[i] * av[i];
    }
    gr.accumulate(ia, da);
    gr.accumulate(ib, db);
  });
}

template <class T>
Var<T> scale(Var<T> x, T c) {
  Graph<T>& g = detail::graph_of(x);
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= c;
  const std::size_t ix = x.id;
  return g.record("scale", std::move(out), {ix}, [ix, c](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    Tensor<T> dx = dy;
    for (auto& v : dx.data()) v *= c;
    gr.accumulate(ix, dx);
  });
}

/// Sum of all elements, as a [1] tensor.
template <class T>
Var<T> sum(Var<T> x) {
  Graph<T>& g = detail::graph_of(x);
  T s = 0;
  for (T v : x.value().data()) s += v;
  const std::size_t ix = x.id;
  const Shape in_shape = x.shape();
  return g.record("sum", Tensor<T>(Shape{1}, s), {ix}, [ix, in_shape](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    gr.accumulate(ix, Tensor<T>::full(in_shape, dy[0]));
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape s) {
  Graph<T>& g = detail::graph_of(x);
  Tensor<T> out = x.value().reshaped(std::move(s));
  const std::size_t ix = x.id;
  const Shape in_shape = x.shape();
  return g.record("reshape", std::move(out), {ix}, [ix, in_shape](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    gr.accumulate(ix, dy.reshaped(in_shape));
  });
}

template <class T>
Var<T> transpose(Var<T> x) {
  Graph<T>& g = detail::graph_of(x);
  const std::size_t ix = x.id;
  return g.record("transpose", kernels::transpose_last2(x.value()), {ix},
                  [ix](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) { gr.accumulate(ix, kernels::transpose_last2(dy)); });
}

/// Slice [start, start+len) along `axis`.
template <class T>
Var<T> narrow(Var<T> x, int axis, std::size_t start, std::size_t len) {
  Graph<T>& g = detail::graph_of(x);
  const kernels::AxisSplit a = kernels::split_axis(x.shape(), axis);
  if (len == 0 || start + len > a.len) throw ShapeError("narrow: slice out of range");
  Shape os = x.shape();
  const std::size_t ax = static_cast<std::size_t>(axis < 0 ? axis + static_cast<int>(os.size()) : axis);
  os[ax] = len;
  Tensor<T> out(os);
  const Tensor<T>& xv = x.value();
  for (std::size_t o = 0; o < a.outer; ++o)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t in = 0; in < a.inner; ++in)
        out[(o * len + i) * a.inner + in] = xv[(o * a.len + start + i) * a.inner + in];
  const std::size_t ix = x.id;
  const Shape in_shape = x.shape();
  return g.record("narrow", std::move(out), {ix}, [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    Tensor<T> dx(in_shape);
    for (std::size_t o = 0; o < a.outer; ++o)
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t in = 0; in < a.inner; ++in)
          dx[(o * a.len + start + i) * a.inner + in] = dy[(o * len + i) * a.inner + in];
    gr.accumulate(ix, dx);
  });
}

template <class T>
Var<T> concat(std::span<const Var<T>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph<T>& g = detail::graph_of(parts[0]);
  const Shape& s0 = parts[0].shape();
  const std::size_t r = s0.size();
  const std::size_t ax = static_cast<std::size_t>(axis < 0 ? axis + static_cast<int>(r) : axis);
  if (ax >= r) throw ShapeError("concat: axis out of range");
  std::vector<std::size_t> lens, ids;
  std::size_t total = 0;
  for (const Var<T>& p : parts) {
    detail::same_graph(p, parts[0]);
    const Shape& s = p.shape();
    if (s.size() != r) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < r; ++i)
      if (i != ax && s[i] != s0[i]) throw ShapeError("concat: dimension " + std::to_string(i) + " differs");
    lens.push_back(s[ax]);
    ids.push_back(p.id);
    total += s[ax];
  }
  Shape os = s0;
  os[ax] = total;
  const kernels::AxisSplit a = kernels::split_axis(os, static_cast<int>(ax));
  Tensor<T> out(os);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& pv = parts[k].value();
    for (std::size_t o = 0; o < a.outer; ++o)
      for (std::size_t i = 0; i < lens[k]; ++i)
        for (std::size_t in = 0; in < a.inner; ++in)
          out[(o * total + off + i) * a.inner + in] = pv[(o * lens[k] + i) * a.inner + in];
    off += lens[k];
  }
  return g.record("concat", std::move(out), ids, [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.requires_grad(ids[k])) {
        Tensor<T> dp(gr.value(ids[k]).shape());
        for (std::size_t o = 0; o < a.outer; ++o)
          for (std::size_t i = 0; i < lens[k]; ++i)
            for (std::size_t in = 0; in < a.inner; ++in)
              dp[(o * lens[k] + i) * a.inner + in] = dy[(o * total + offset + i) * a.inner + in];
        gr.accumulate(ids[k], dp);
      }
      offset += lens[k];
    }
  });
}

template <class T>
Var<T> concat(std::initializer_list<Var<T>> parts, int axis) {
  std::vector<Var<T>> v(parts);
  return concat<T>(std::span<const Var<T>>(v), axis);
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = detail::graph_of(a);
  const kernels::MatmulGeometry geo = kernels::matmul_geometry(a.value(), b.value());
  g.add_macs(geo.macs());
  const std::size_t ia = a.id, ib = b.id;
  return g.record("matmul", kernels::matmul(a.value(), b.value()), {ia, ib},
                  [ia, ib](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
                    if (gr.requires_grad(ia)) gr.accumulate(ia, kernels::matmul(dy, kernels::transpose_last2(gr.value(ib))));
                    if (gr.requires_grad(ib)) gr.accumulate(ib, kernels::matmul(kernels::transpose_last2(gr.value(ia)), dy));
                  });
}

/// x[..., d] + b[d], broadcasting the bias over leading dimensions.
template <class T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  detail::same_graph(x, b);
  Graph<T>& g = detail::graph_of(x);
  const std::size_t d = x.dim(x.shape().size() - 1);
  if (b.shape() != Shape{d}) throw ShapeError("add_bias: bias must be [" + std::to_string(d) + "]");
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i % d];
  const std::size_t ix = x.id, ibias = b.id;
  return g.record("add_bias", std::move(out), {ix, ibias}, [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    gr.accumulate(ix, dy);
    Tensor<T> db(Shape{d});
    for (std::size_t i = 0; i < dy.numel(); ++i) db[i % d] += dy[i];
    gr.accumulate(ibias, db);
  });
}

/// x[N, din] · W[din, dout] + b[dout]
template <class T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b) {
  Var<T> y = matmul(x, w);
  return b ? add_bias(y, *b) : y;
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, Conv2dOptions opt) {
  detail::same_graph(x, w);
  Graph<T>& g = detail::graph_of(x);
  const Tensor<T>* bias = b ? &b->value() : nullptr;
  const kernels::ConvGeometry geo = kernels::conv_geometry(x.value(), w.value(), bias, opt);
  g.add_macs(geo.macs());
  Tensor<T> out = kernels::conv2d(x.value(), w.value(), bias, opt);
  std::vector<std::size_t> inputs{x.id, w.id};
  if (b) inputs.push_back(b->id);
  const std::size_t ix = x.id, iw = w.id;
  const std::optional<std::size_t> ib = b ? std::optional<std::size_t>(b->id) : std::nullopt;
  return g.record("conv2d", std::move(out), inputs, [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    auto grads = kernels::conv2d_backward(gr.value(ix), gr.value(iw), ib.has_value(), dy, opt);
    gr.accumulate(ix, grads.dx);
    gr.accumulate(iw, grads.dw);
    if (ib) gr.accumulate(*ib, *grads.db);
  });
}

template <class T>
Var<T> avgpool2d(Var<T> x, std::size_t s) {
  Graph<T>& g = detail::graph_of(x);
  const std::size_t ix = x.id;
  const Shape in_shape = x.shape();
  return g.record("avgpool2d", kernels::avgpool2d(x.value(), s), {ix}, [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    gr.accumulate(ix, kernels::avgpool2d_backward(in_shape, dy, s));
  });
}

template <class T>
Var<T> softmax(Var<T> x, int axis) {
  Graph<T>& g = detail::graph_of(x);
  const std::size_t ix = x.id;
  return g.record("softmax", kernels::softmax(x.value(), axis), {ix},
                  [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>& y) {
                    gr.accumulate(ix, kernels::softmax_backward(y, dy, axis));
                  });
}

/// Normalize over the last axis, then scale by gamma and shift by beta.
template <class T>
Var<T> layernorm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  detail::same_graph(x, gamma);
  Graph<T>& g = detail::graph_of(x);
  auto saved = std::make_shared<kernels::LayerNormSaved<T>>();
  Tensor<T> out = kernels::layernorm(x.value(), gamma.value(), beta.value(), eps, saved.get());
  const std::size_t ix = x.id, ig = gamma.id, ibeta = beta.id;
  return g.record("layernorm", std::move(out), {ix, ig, ibeta},
                  [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
                    auto grads = kernels::layernorm_backward(*saved, gr.value(ig), dy);
                    gr.accumulate(ix, grads.dx);
                    gr.accumulate(ig, grads.dgamma);
                    gr.accumulate(ibeta, grads.dbeta);
                  });
}

template <class T>
Var<T> activation(Var<T> x, Activation kind) {
  Graph<T>& g = detail::graph_of(x);
  const std::size_t ix = x.id;
  return g.record(std::string(kernels::activation_name(kind)), kernels::activation(x.value(), kind), {ix},
                  [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
                    gr.accumulate(ix, kernels::activation_backward(gr.value(ix), dy, kind));
                  });
}

/// Per-channel scale and shift on [C,H,W] or [N,C,H,W]: y = gamma[c]·x + beta[c].
template <class T>
Var<T> channel_affine(Var<T> x, Var<T> gamma, Var<T> beta) {
  detail::same_graph(x, gamma);
  Graph<T>& g = detail::graph_of(x);
  const Shape& s = x.shape();
  if (s.size() != 3 && s.size() != 4) throw ShapeError("channel_affine: input must be [C,H,W] or [N,C,H,W]");
  const std::size_t r = s.size();
  const std::size_t c = s[r - 3];
  const std::size_t plane = s[r - 2] * s[r - 1];
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("channel_affine: gamma/beta must be [" + std::to_string(c) + "]");
  }
  Tensor<T> out(s);
  const Tensor<T>& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const std::size_t ch = (i / plane) % c;
    out[i] = gamma.value()[ch] * xv[i] + beta.value()[ch];
  }
  const std::size_t ix = x.id, ig = gamma.id, ibeta = beta.id;
  return g.record("channel_affine", std::move(out), {ix, ig, ibeta},
                  [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
                    const Tensor<T>& xv2 = gr.value(ix);
                    const Tensor<T>& gv = gr.value(ig);
                    Tensor<T> dx(dy.shape()), dg(Shape{c}), db(Shape{c});
                    for (std::size_t i = 0; i < dy.numel(); ++i) {
                      const std::size_t ch = (i / plane) % c;
                      dx[i] = gv[ch] * dy[i];
                      dg[ch] += xv2[i] * dy[i];
                      db[ch] += dy[i];
                    }
                    gr.accumulate(ix, dx);
                    gr.accumulate(ig, dg);
                    gr.accumulate(ibeta, db);
                  });
}

/// Mean over spatial positions: [C,H,W] -> [1, C].
template <class T>
Var<T> global_avg_pool(Var<T> x) {
  Graph<T>& g = detail::graph_of(x);
  const Shape s = x.shape();
  if (s.size() != 3) throw ShapeError("global_avg_pool: input must be [C,H,W]");
  const std::size_t c = s[0], plane = s[1] * s[2];
  Tensor<T> out(Shape{1, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += x.value()[ch * plane + i];
    out[ch] = acc / static_cast<T>(plane);
  }
  const std::size_t ix = x.id;
  return g.record("global_avg_pool", std::move(out), {ix}, [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
    Tensor<T> dx(s);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) dx[ch * plane + i] = dy[ch] / static_cast<T>(plane);
    gr.accumulate(ix, dx);
  });
}

/// Mean softmax cross-entropy of logits [B, K] against integer labels; returns [1].
template <class T>
Var<T> cross_entropy(Var<T> logits, std::vector<std::size_t> labels) {
  Graph<T>& g = detail::graph_of(logits);
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) throw ShapeError("cross_entropy: logits must be [B,K] with B labels");
  const std::size_t b = s[0], k = s[1];
  Tensor<T> prob = kernels::softmax(logits.value(), 1);
  T loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) throw ShapeError("cross_entropy: label out of range");
    const T* row = logits.value().data().data() + i * k;
    const T mx = *std::max_element(row, row + k);
    T se = 0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    loss += -(row[labels[i]] - mx - std::log(se));
  }
  loss /= static_cast<T>(b);
  const std::size_t il = logits.id;
  return g.record("cross_entropy", Tensor<T>(Shape{1}, loss), {il},
                  [=](Graph<T>& gr, const Tensor<T>& dy, const Tensor<T>&) {
                    Tensor<T> dx = prob;
                    for (std::size_t i = 0; i < b; ++i) dx[i * k + labels[i]] -= T{1};
                    for (auto& v : dx.data()) v *= dy[0] / static_cast<T>(b);
                    gr.accumulate(il, dx);
                  });
}

}  // namespace evit::ops

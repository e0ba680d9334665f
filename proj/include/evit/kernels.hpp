#pragma once

// Forward and backward rules for every numeric primitive, on plain tensors.
// The differentiable wrappers in ops.hpp record these on a Graph.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "evit/tensor.hpp"

namespace evit::kernels {

enum class Activation { gelu, relu };

inline std::string_view activation_name(Activation a) { return a == Activation::gelu ? "gelu" : "relu"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + std::string(s) + "' (expected gelu or relu)");
}

// ---------------------------------------------------------------------------
// conv2d

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Resolved sizes of one conv2d call. Rank-3 inputs are treated as N = 1.
struct ConvGeometry {
  std::size_t n, cin, h, w;
  std::size_t cout, kh, kw;
  std::size_t cin_per_group, cout_per_group;
  std::size_t ho, wo;
  std::size_t stride, padding;
  bool batched;

  Shape output_shape() const {
    return batched ? Shape{n, cout, ho, wo} : Shape{cout, ho, wo};
  }
  std::uint64_t macs() const {
    return static_cast<std::uint64_t>(n) * cout * ho * wo * cin_per_group * kh * kw;
  }
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias,
                           const Conv2dOptions& opt) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError("conv2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
  }
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be [Cout,Cin/g,kh,kw], got " + shape_str(w.shape()));
  if (opt.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (opt.groups < 1) throw ShapeError("conv2d: groups must be >= 1");
  ConvGeometry g{};
  g.batched = x.rank() == 4;
  const std::size_t o = g.batched ? 1 : 0;
  g.n = g.batched ? x.dim(0) : 1;
  g.cin = x.dim(o);
  g.h = x.dim(o + 1);
  g.w = x.dim(o + 2);
  g.cout = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = opt.stride;
  g.padding = opt.padding;
  if (g.cin % opt.groups != 0) {
    throw ShapeError("conv2d: input channels " + std::to_string(g.cin) + " not divisible by groups " +
                     std::to_string(opt.groups));
  }
  if (g.cout % opt.groups != 0) {
    throw ShapeError("conv2d: output channels " + std::to_string(g.cout) + " not divisible by groups " +
                     std::to_string(opt.groups));
  }
  g.cin_per_group = g.cin / opt.groups;
  g.cout_per_group = g.cout / opt.groups;
  if (w.dim(1) != g.cin_per_group) {
    throw ShapeError("conv2d: weight dim 1 (Cin/g) is " + std::to_string(w.dim(1)) + ", expected " +
                     std::to_string(g.cin_per_group));
  }
  if (g.h + 2 * g.padding < g.kh) {
    throw ShapeError("conv2d: kernel height " + std::to_string(g.kh) + " exceeds padded input height");
  }
  if (g.w + 2 * g.padding < g.kw) {
    throw ShapeError("conv2d: kernel width " + std::to_string(g.kw) + " exceeds padded input width");
  }
  g.ho = (g.h + 2 * g.padding - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.padding - g.kw) / g.stride + 1;
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.cout) + "], got " + shape_str(bias->shape()));
  }
  return g;
}

namespace detail {
// Output columns [lo, hi) whose input column ox*stride + k - pad lies inside [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out_extent, std::size_t in_extent,
                                                       std::size_t stride, std::size_t pad, std::size_t k) {
  const long s = static_cast<long>(stride);
  const long off = static_cast<long>(k) - static_cast<long>(pad);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long last = static_cast<long>(in_extent) - 1 - off;
  if (last < 0) return {0, 0};
  long hi = std::min<long>(static_cast<long>(out_extent), last / s + 1);
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}
}  // namespace detail

/// Grouped 2-D cross-correlation (no kernel flip).
///
/// Each output element accumulates its products in (input channel, ky, kx)
/// order starting from zero, with the bias added last.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias, const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry(x, w, bias, opt);
  Tensor<T> y(g.output_shape());
  const T* xp = x.data().data();
  const T* wp = w.data().data();
  T* yp = y.data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oc = 0; oc < g.cout; ++oc) {
      const std::size_t grp = oc / g.cout_per_group;
      T* yplane = yp + (n * g.cout + oc) * g.ho * g.wo;
      for (std::size_t icg = 0; icg < g.cin_per_group; ++icg) {
        const std::size_t ic = grp * g.cin_per_group + icg;
        const T* xplane = xp + (n * g.cin + ic) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto [oy0, oy1] = detail::valid_range(g.ho, g.h, g.stride, g.padding, ky);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const T wv = wp[((oc * g.cin_per_group + icg) * g.kh + ky) * g.kw + kx];
            const auto [ox0, ox1] = detail::valid_range(g.wo, g.w, g.stride, g.padding, kx);
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const T* xrow = xplane + (oy * g.stride + ky - g.padding) * g.w;
              T* yrow = yplane + oy * g.wo;
              for (std::size_t ox = ox0; ox < ox1; ++ox) {
                yrow[ox] += wv * xrow[ox * g.stride + kx - g.padding];
              }
            }
          }
        }
      }
      if (bias) {
        const T bv = (*bias)[oc];
        for (std::size_t i = 0; i < g.ho * g.wo; ++i) yplane[i] += bv;
      }
    }
  }
  return y;
}

template <class T>
struct Conv2dGrads {
  Tensor<T> dx;
  Tensor<T> dw;
  std::optional<Tensor<T>> db;
};

template <class T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, bool has_bias, const Tensor<T>& dy,
                               const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry<T>(x, w, nullptr, opt);
  if (dy.shape() != g.output_shape()) throw ShapeError("conv2d_backward: upstream gradient shape mismatch");
  Conv2dGrads<T> r{Tensor<T>(x.shape()), Tensor<T>(w.shape()), std::nullopt};
  const T* xp = x.data().data();
  const T* wp = w.data().data();
  const T* dyp = dy.data().data();
  T* dxp = r.dx.data().data();
  T* dwp = r.dw.data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oc = 0; oc < g.cout; ++oc) {
      const std::size_t grp = oc / g.cout_per_group;
      const T* dyplane = dyp + (n * g.cout + oc) * g.ho * g.wo;
      for (std::size_t icg = 0; icg < g.cin_per_group; ++icg) {
        const std::size_t ic = grp * g.cin_per_group + icg;
        const T* xplane = xp + (n * g.cin + ic) * g.h * g.w;
        T* dxplane = dxp + (n * g.cin + ic) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto [oy0, oy1] = detail::valid_range(g.ho, g.h, g.stride, g.padding, ky);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::size_t widx = ((oc * g.cin_per_group + icg) * g.kh + ky) * g.kw + kx;
            const T wv = wp[widx];
            T dwacc = 0;
            const auto [ox0, ox1] = detail::valid_range(g.wo, g.w, g.stride, g.padding, kx);
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t row = (oy * g.stride + ky - g.padding) * g.w;
              const T* dyrow = dyplane + oy * g.wo;
              for (std::size_t ox = ox0; ox < ox1; ++ox) {
                const std::size_t col = ox * g.stride + kx - g.padding;
                dwacc += xplane[row + col] * dyrow[ox];
                dxplane[row + col] += wv * dyrow[ox];
              }
            }
            dwp[widx] += dwacc;
          }
        }
      }
    }
  }
  if (has_bias) {
    Tensor<T> db(Shape{g.cout});
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t oc = 0; oc < g.cout; ++oc) {
        const T* dyplane = dyp + (n * g.cout + oc) * g.ho * g.wo;
        for (std::size_t i = 0; i < g.ho * g.wo; ++i) db[oc] += dyplane[i];
      }
    r.db = std::move(db);
  }
  return r;
}

// ---------------------------------------------------------------------------
// avgpool2d (non-overlapping, stride == window)

template <class T>
Tensor<T> avgpool2d(const Tensor<T>& x, std::size_t s) {
  if (x.rank() != 3 && x.rank() != 4) throw ShapeError("avgpool2d: input must be [C,H,W] or [N,C,H,W]");
  if (s < 1) throw ShapeError("avgpool2d: stride must be >= 1");
  const std::size_t r = x.rank();
  const std::size_t h = x.dim(r - 2), w = x.dim(r - 1);
  if (h % s != 0) throw ShapeError("avgpool2d: height " + std::to_string(h) + " not divisible by stride " + std::to_string(s));
  if (w % s != 0) throw ShapeError("avgpool2d: width " + std::to_string(w) + " not divisible by stride " + std::to_string(s));
  if (s == 1) return x;
  Shape os = x.shape();
  os[r - 2] = h / s;
  os[r - 1] = w / s;
  Tensor<T> y(os);
  const std::size_t planes = x.numel() / (h * w);
  const std::size_t ho = h / s, wo = w / s;
  const T inv = T{1} / static_cast<T>(s * s);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* xp = x.data().data() + p * h * w;
    T* yp = y.data().data() + p * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T acc = 0;
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx) acc += xp[(oy * s + dy) * w + ox * s + dx];
        yp[oy * wo + ox] = acc * inv;
      }
  }
  return y;
}

template <class T>
Tensor<T> avgpool2d_backward(const Shape& in_shape, const Tensor<T>& dy, std::size_t s) {
  if (s == 1) return dy;
  Tensor<T> dx(in_shape);
  const std::size_t r = in_shape.size();
  const std::size_t h = in_shape[r - 2], w = in_shape[r - 1];
  const std::size_t ho = h / s, wo = w / s;
  const std::size_t planes = dx.numel() / (h * w);
  const T inv = T{1} / static_cast<T>(s * s);
  for (std::size_t p = 0; p < planes; ++p) {
    T* dxp = dx.data().data() + p * h * w;
    const T* dyp = dy.data().data() + p * ho * wo;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) dxp[y * w + xx] = dyp[(y / s) * wo + xx / s] * inv;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// matmul over matching leading batch dimensions

struct MatmulGeometry {
  std::size_t batch, m, k, n;
  Shape out_shape;
  std::uint64_t macs() const { return static_cast<std::uint64_t>(batch) * m * k * n; }
};

template <class T>
MatmulGeometry matmul_geometry(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands must have rank >= 2");
  if (a.rank() != b.rank()) {
    throw ShapeError("matmul: rank mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("matmul: batch dimension " + std::to_string(i) + " differs (" + std::to_string(a.dim(i)) +
                       " vs " + std::to_string(b.dim(i)) + ")");
    }
  }
  if (a.dim(r - 1) != b.dim(r - 2)) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.dim(r - 1)) + " vs " +
                     std::to_string(b.dim(r - 2)) + ")");
  }
  MatmulGeometry g{};
  g.m = a.dim(r - 2);
  g.k = a.dim(r - 1);
  g.n = b.dim(r - 1);
  g.batch = a.numel() / (g.m * g.k);
  g.out_shape = a.shape();
  g.out_shape[r - 1] = g.n;
  return g;
}

/// Batched product. Each output element sums over k in increasing order.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const MatmulGeometry g = matmul_geometry(a, b);
  Tensor<T> c(g.out_shape);
  for (std::size_t bi = 0; bi < g.batch; ++bi) {
    const T* ap = a.data().data() + bi * g.m * g.k;
    const T* bp = b.data().data() + bi * g.k * g.n;
    T* cp = c.data().data() + bi * g.m * g.n;
    for (std::size_t i = 0; i < g.m; ++i) {
      T* crow = cp + i * g.n;
      for (std::size_t kk = 0; kk < g.k; ++kk) {
        const T av = ap[i * g.k + kk];
        const T* brow = bp + kk * g.n;
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return c;
}

/// Swap the last two dimensions.
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose: rank must be >= 2");
  const std::size_t r = x.rank();
  const std::size_t m = x.dim(r - 2), n = x.dim(r - 1);
  Shape s = x.shape();
  std::swap(s[r - 2], s[r - 1]);
  Tensor<T> y(s);
  const std::size_t batch = x.numel() / (m * n);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xp = x.data().data() + b * m * n;
    T* yp = y.data().data() + b * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) yp[j * m + i] = xp[i * n + j];
  }
  return y;
}

// ---------------------------------------------------------------------------
// softmax along an arbitrary axis (max-subtracted)

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, int axis) {
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
  AxisSplit a{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) a.outer *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) a.inner *= s[static_cast<std::size_t>(i)];
  return a;
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const AxisSplit a = split_axis(x.shape(), axis);
  Tensor<T> y(x.shape());
  for (std::size_t o = 0; o < a.outer; ++o)
    for (std::size_t in = 0; in < a.inner; ++in) {
      const std::size_t base = o * a.len * a.inner + in;
      T mx = x[base];
      for (std::size_t i = 1; i < a.len; ++i) mx = std::max(mx, x[base + i * a.inner]);
      T sum = 0;
      for (std::size_t i = 0; i < a.len; ++i) {
        const T e = std::exp(x[base + i * a.inner] - mx);
        y[base + i * a.inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < a.len; ++i) y[base + i * a.inner] /= sum;
    }
  return y;
}

template <class T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy, int axis) {
  const AxisSplit a = split_axis(y.shape(), axis);
  Tensor<T> dx(y.shape());
  for (std::size_t o = 0; o < a.outer; ++o)
    for (std::size_t in = 0; in < a.inner; ++in) {
      const std::size_t base = o * a.len * a.inner + in;
      T dot = 0;
      for (std::size_t i = 0; i < a.len; ++i) dot += y[base + i * a.inner] * dy[base + i * a.inner];
      for (std::size_t i = 0; i < a.len; ++i) {
        const std::size_t j = base + i * a.inner;
        dx[j] = y[j] * (dy[j] - dot);
      }
    }
  return dx;
}

// ---------------------------------------------------------------------------
// layer normalization over the last axis

template <class T>
struct LayerNormSaved {
  Tensor<T> xhat;
  std::vector<T> rstd;
};

template <class T>
void check_layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != d) throw ShapeError("layernorm: gamma must be [" + std::to_string(d) + "]");
  if (beta.rank() != 1 || beta.dim(0) != d) throw ShapeError("layernorm: beta must be [" + std::to_string(d) + "]");
  if (!(eps > 0)) throw ShapeError("layernorm: eps must be positive");
}

template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                    LayerNormSaved<T>* saved = nullptr) {
  check_layernorm(x, gamma, beta, eps);
  const std::size_t d = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / d;
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xp = x.data().data() + r * d;
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += xp[i];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xp[i] - mean) * (xp[i] - mean);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (xp[i] - mean) * rs;
      xhat[r * d + i] = h;
      y[r * d + i] = gamma[i] * h + beta[i];
    }
  }
  if (saved) *saved = {std::move(xhat), std::move(rstd)};
  return y;
}

template <class T>
struct LayerNormGrads {
  Tensor<T> dx, dgamma, dbeta;
};

template <class T>
LayerNormGrads<T> layernorm_backward(const LayerNormSaved<T>& s, const Tensor<T>& gamma, const Tensor<T>& dy) {
  const std::size_t d = gamma.dim(0);
  const std::size_t rows = dy.numel() / d;
  LayerNormGrads<T> g{Tensor<T>(dy.shape()), Tensor<T>(gamma.shape()), Tensor<T>(gamma.shape())};
  std::vector<T> dxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    T sum_dxhat = 0, sum_dxhat_xhat = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t j = r * d + i;
      g.dgamma[i] += dy[j] * s.xhat[j];
      g.dbeta[i] += dy[j];
      dxhat[i] = dy[j] * gamma[i];
      sum_dxhat += dxhat[i];
      sum_dxhat_xhat += dxhat[i] * s.xhat[j];
    }
    const T invd = T{1} / static_cast<T>(d);
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t j = r * d + i;
      g.dx[j] = s.rstd[r] * (dxhat[i] - invd * sum_dxhat - s.xhat[j] * invd * sum_dxhat_xhat);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// pointwise activations

template <class T>
T gelu_scalar(T x) {
  return T{0.5} * x * (T{1} + std::erf(x / std::sqrt(T{2})));
}

template <class T>
T gelu_grad_scalar(T x) {
  const T cdf = T{0.5} * (T{1} + std::erf(x / std::sqrt(T{2})));
  const T pdf = std::exp(T{-0.5} * x * x) / std::sqrt(T{2} * static_cast<T>(M_PI));
  return cdf + x * pdf;
}

template <class T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    y[i] = kind == Activation::relu ? (x[i] > 0 ? x[i] : T{0}) : gelu_scalar(x[i]);
  return y;
}

template <class T>
Tensor<T> activation_backward(const Tensor<T>& x, const Tensor<T>& dy, Activation kind) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    dx[i] = dy[i] * (kind == Activation::relu ? (x[i] > 0 ? T{1} : T{0}) : gelu_grad_scalar(x[i]));
  return dx;
}

}  // namespace evit::kernels

#pragma once

// Hybrid pyramid backbone: ECB (convolutional attention + local FFN) and LTB
// (parallel ESA / MHCA forks + local FFN) blocks over four stages.
//
// Feature maps are [C, H, W]; token sequences are [N, C] with token i·w + j at
// lattice cell (i, j).

#include <array>
#include <string>
#include <vector>

#include "evit/backbone_config.hpp"
#include "evit/ops.hpp"
#include "evit/param_store.hpp"
#include "evit/vit.hpp"

namespace evit::backbone {

template <class T>
using FeaturePyramid = std::array<Tensor<T>, kStages>;

// ---------------------------------------------------------------------------
// lattice <-> sequence

/// [N, d] tokens -> [d, h, w] feature map.
template <class T>
Var<T> seq2img(Var<T> z, std::size_t h, std::size_t w) {
  if (z.shape().size() != 2) throw ShapeError("seq2img: tokens must be [N, d]");
  if (z.dim(0) != h * w) {
    throw ShapeError("seq2img: " + std::to_string(z.dim(0)) + " tokens cannot fill a " + std::to_string(h) + "x" +
                     std::to_string(w) + " lattice");
  }
  return ops::reshape(ops::transpose(z), Shape{z.dim(1), h, w});
}

/// [d, h, w] feature map -> [h·w, d] tokens.
template <class T>
Var<T> img2seq(Var<T> x) {
  if (x.shape().size() != 3) throw ShapeError("img2seq: feature map must be [d, h, w]");
  return ops::transpose(ops::reshape(x, Shape{x.dim(0), x.dim(1) * x.dim(2)}));
}

// ---------------------------------------------------------------------------
// helpers

template <class T>
Var<T> conv(ParamBinder<T>& p, const std::string& prefix, Var<T> x, kernels::Conv2dOptions opt, bool bias = true) {
  return ops::conv2d(x, p(prefix + ".weight"), bias ? std::optional<Var<T>>(p(prefix + ".bias")) : std::nullopt, opt);
}

template <class T>
void init_conv(ParamStore<T>& s, ParamInit<T>& init, const std::string& prefix, std::size_t cout, std::size_t cin_per_group,
               std::size_t k, bool bias = true) {
  init.weight(s, prefix + ".weight", {cout, cin_per_group, k, k}, cin_per_group * k * k);
  if (bias) init.zeros(s, prefix + ".bias", {cout});
}

template <class T>
void init_affine(ParamStore<T>& s, ParamInit<T>& init, const std::string& prefix, std::size_t c) {
  init.ones(s, prefix + ".gamma", {c});
  init.zeros(s, prefix + ".beta", {c});
}

// ---------------------------------------------------------------------------
// LFFN

struct LffnOptions {
  double ratio = 3.0;
  bool depthwise = true;
  Activation activation = Activation::gelu;

  std::size_t hidden(std::size_t d) const {
    return static_cast<std::size_t>(std::lround(ratio * static_cast<double>(d)));
  }
};

template <class T>
void init_lffn(ParamStore<T>& s, ParamInit<T>& init, const std::string& prefix, std::size_t d, const LffnOptions& o) {
  const std::size_t hid = o.hidden(d);
  init_conv(s, init, prefix + ".fc1", hid, d, 1);
  if (o.depthwise) init_conv(s, init, prefix + ".dw", hid, 1, 3);
  init_conv(s, init, prefix + ".fc2", d, hid, 1);
}

/// Feed-forward on the token lattice: 1×1 expand, optional depthwise 3×3,
/// activation, 1×1 project. No residual.
template <class T>
Var<T> lffn(Var<T> z, std::size_t h, std::size_t w, ParamBinder<T>& p, const std::string& prefix, const LffnOptions& o) {
  if (z.shape().size() != 2) throw ShapeError("lffn: tokens must be [N, d]");
  const std::size_t d = z.dim(1);
  Var<T> x = seq2img(z, h, w);
  if (p(prefix + ".fc1.weight").dim(1) != d) {
    throw ShapeError("lffn: token width " + std::to_string(d) + " does not match parameters of " + prefix);
  }
  x = conv(p, prefix + ".fc1", x, {});
  if (o.depthwise) {
    const std::size_t hid = x.dim(0);
    x = conv(p, prefix + ".dw", x, {1, 1, hid});
  }
  x = ops::activation(x, o.activation);
  x = conv(p, prefix + ".fc2", x, {});
  return img2seq(x);
}

// ---------------------------------------------------------------------------
// ESA

/// Multi-head attention with keys and values average-pooled by stride `s` on
/// the h×w token lattice. Queries are never pooled. No norm, no residual.
///
/// Heads are channel slices; each head's [N, N/s²] weight matrix is appended
/// to `attention` when given.
template <class T>
Var<T> esa(Var<T> x, std::size_t h, std::size_t w, ParamBinder<T>& p, const std::string& prefix, std::size_t heads,
           std::size_t s, std::vector<Tensor<T>>* attention = nullptr) {
  if (x.shape().size() != 2) throw ShapeError("esa: tokens must be [N, d]");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (heads == 0 || d % heads) {
    throw ShapeError("esa: width " + std::to_string(d) + " not divisible by heads " + std::to_string(heads));
  }
  if (s == 0 || h % s || w % s) {
    throw ShapeError("esa: lattice " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by stride " +
                     std::to_string(s));
  }
  if (n != h * w) throw ShapeError("esa: token count does not match lattice");
  const std::size_t dh = d / heads;
  auto pool = [&](Var<T> t) { return img2seq(ops::avgpool2d(seq2img(t, h, w), s)); };
  Var<T> q = vit::linear(p, prefix + ".q", x);
  Var<T> k = pool(vit::linear(p, prefix + ".k", x));
  Var<T> v = pool(vit::linear(p, prefix + ".v", x));
  const T sc = T{1} / std::sqrt(static_cast<T>(dh));
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    Var<T> qh = ops::narrow(q, 1, i * dh, dh);
    Var<T> kh = ops::narrow(k, 1, i * dh, dh);
    Var<T> vh = ops::narrow(v, 1, i * dh, dh);
    Var<T> a = ops::softmax(ops::scale(ops::matmul(qh, ops::transpose(kh)), sc), -1);
    if (attention) attention->push_back(a.value());
    outs.push_back(ops::matmul(a, vh));
  }
  Var<T> cat = heads == 1 ? outs[0] : ops::concat<T>(std::span<const Var<T>>(outs), 1);
  return vit::linear(p, prefix + ".o", cat);
}

template <class T>
void init_esa(ParamStore<T>& s, ParamInit<T>& init, const std::string& prefix, std::size_t d) {
  vit::init_msa(s, init, prefix, d);
}

// ---------------------------------------------------------------------------
// MHCA

template <class T>
void init_mhca(ParamStore<T>& s, ParamInit<T>& init, const std::string& prefix, std::size_t d, std::size_t heads,
               std::size_t k) {
  init_conv(s, init, prefix + ".group", d, d / heads, k, false);
  init_affine(s, init, prefix + ".norm", d);
  init_conv(s, init, prefix + ".proj", d, d, 1);
}

/// Multi-head convolutional attention on [d, h, w]: a k×k convolution with
/// one group per head (each head sees only its channel slice and the k×k
/// neighborhood), per-channel affine normalization, activation, then the
/// 1×1 output projection.
template <class T>
Var<T> mhca(Var<T> x, ParamBinder<T>& p, const std::string& prefix, std::size_t heads, std::size_t k, Activation act) {
  if (x.shape().size() != 3) throw ShapeError("mhca: input must be [d, h, w]");
  const std::size_t d = x.dim(0);
  if (heads == 0 || d % heads) {
    throw ShapeError("mhca: width " + std::to_string(d) + " not divisible by heads " + std::to_string(heads));
  }
  if (k % 2 == 0) throw ShapeError("mhca: kernel size must be odd, got " + std::to_string(k));
  Var<T> y = conv(p, prefix + ".group", x, {1, (k - 1) / 2, heads}, false);
  y = ops::channel_affine(y, p(prefix + ".norm.gamma"), p(prefix + ".norm.beta"));
  y = ops::activation(y, act);
  return conv(p, prefix + ".proj", y, {});
}

// ---------------------------------------------------------------------------
// blocks

/// Per-stage settings shared by the blocks of one stage.
struct BlockSpec {
  std::size_t width = 0;
  std::size_t heads = 1;
  std::size_t esa_stride = 1;
  std::size_t mhca_kernel = 3;
  Activation activation = Activation::gelu;
  LffnOptions lffn;

  static BlockSpec for_stage(const BackboneConfig& c, std::size_t stage) {
    return {c.stage_widths[stage], c.stage_heads[stage], c.esa_strides[stage], c.mhca_kernel, c.activation,
            LffnOptions{c.lffn_ratio, c.lffn_depthwise, c.activation}};
  }
};

template <class T>
void init_ecb(ParamStore<T>& s, ParamInit<T>& init, const std::string& prefix, const BlockSpec& b) {
  init_mhca(s, init, prefix + ".mhca", b.width, b.heads, b.mhca_kernel);
  init_lffn(s, init, prefix + ".lffn", b.width, b.lffn);
}

/// z̃ = MHCA(z) + z; out = LFFN(z̃) + z̃.
template <class T>
Var<T> ecb(Var<T> z, ParamBinder<T>& p, const std::string& prefix, const BlockSpec& b) {
  if (z.shape().size() != 3) throw ShapeError("ecb: input must be [d, h, w]");
  const std::size_t h = z.dim(1), w = z.dim(2);
  Var<T> zt = ops::add(mhca(z, p, prefix + ".mhca", b.heads, b.mhca_kernel, b.activation), z);
  Var<T> f = seq2img(lffn(img2seq(zt), h, w, p, prefix + ".lffn", b.lffn), h, w);
  return ops::add(f, zt);
}

template <class T>
void init_ltb(ParamStore<T>& s, ParamInit<T>& init, const std::string& prefix, const BlockSpec& b) {
  const std::size_t half = b.width / 2;
  init_affine(s, init, prefix + ".esa_norm", half);
  init_esa(s, init, prefix + ".esa", half);
  init_mhca(s, init, prefix + ".mhca", half, b.heads, b.mhca_kernel);
  init_conv(s, init, prefix + ".fuse", b.width, b.width, 1);
  init_lffn(s, init, prefix + ".lffn", b.width, b.lffn);
}

/// Channel halves go through ESA (pre-norm, on the token sequence) and MHCA
/// in parallel; the concatenation is fused by a 1×1 conv and added to the
/// input, then LFFN is applied with its own residual.
template <class T>
Var<T> ltb(Var<T> z, ParamBinder<T>& p, const std::string& prefix, const BlockSpec& b,
           std::vector<Tensor<T>>* attention = nullptr) {
  if (z.shape().size() != 3) throw ShapeError("ltb: input must be [d, h, w]");
  const std::size_t d = z.dim(0), h = z.dim(1), w = z.dim(2);
  if (d % 2) throw ShapeError("ltb: width must be even, got " + std::to_string(d));
  const std::size_t half = d / 2;
  Var<T> ta = img2seq(ops::narrow(z, 0, 0, half));
  ta = ops::layernorm(ta, p(prefix + ".esa_norm.gamma"), p(prefix + ".esa_norm.beta"));
  Var<T> ga = seq2img(esa(ta, h, w, p, prefix + ".esa", b.heads, b.esa_stride, attention), h, w);
  Var<T> gb = mhca(ops::narrow(z, 0, half, half), p, prefix + ".mhca", b.heads, b.mhca_kernel, b.activation);
  Var<T> fused = conv(p, prefix + ".fuse", ops::concat<T>({ga, gb}, 0), {});
  Var<T> zt = ops::add(fused, z);
  Var<T> f = seq2img(lffn(img2seq(zt), h, w, p, prefix + ".lffn", b.lffn), h, w);
  return ops::add(f, zt);
}

// ---------------------------------------------------------------------------
// patch embedding

template <class T>
void init_patch_embed(ParamStore<T>& s, ParamInit<T>& init, const std::string& prefix, std::size_t cin,
                      std::size_t width, std::size_t reduction) {
  if (reduction == 4) {
    init_conv(s, init, prefix + ".conv1", width, cin, 3);
    init_affine(s, init, prefix + ".norm", width);
    init_conv(s, init, prefix + ".conv2", width, width, 3);
  } else if (reduction == 2) {
    init_conv(s, init, prefix + ".conv", width, cin, 3);
  } else {
    throw ConfigError("patch_embed: reduction must be 2 or 4");
  }
}

/// Stride-2 3×3 convolutions: two (with norm + activation between) for a
/// reduction of 4, one for a reduction of 2.
template <class T>
Var<T> patch_embed(Var<T> x, ParamBinder<T>& p, const std::string& prefix, std::size_t reduction, Activation act) {
  if (x.shape().size() != 3) throw ShapeError("patch_embed: input must be [c, H, W]");
  if (reduction != 2 && reduction != 4) throw ShapeError("patch_embed: reduction must be 2 or 4");
  if (x.dim(1) % reduction || x.dim(2) % reduction) {
    throw ShapeError("patch_embed: input " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                     " not divisible by reduction " + std::to_string(reduction));
  }
  const kernels::Conv2dOptions s2{2, 1, 1};
  if (reduction == 2) return conv(p, prefix + ".conv", x, s2);
  Var<T> y = conv(p, prefix + ".conv1", x, s2);
  y = ops::activation(ops::channel_affine(y, p(prefix + ".norm.gamma"), p(prefix + ".norm.beta")), act);
  return conv(p, prefix + ".conv2", y, s2);
}

// ---------------------------------------------------------------------------
// full pyramid

inline std::string stage_prefix(std::size_t stage) { return "stage" + std::to_string(stage + 1); }
inline std::string block_prefix(std::size_t stage, std::size_t block) {
  return stage_prefix(stage) + ".block" + std::to_string(block);
}

template <class T>
ParamStore<T> init_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> s;
  ParamInit<T> init(seed);
  for (std::size_t i = 0; i < kStages; ++i) {
    init_patch_embed(s, init, stage_prefix(i) + ".embed", cfg.stage_in_channels(i), cfg.stage_widths[i],
                     BackboneConfig::reduction(i));
    const BlockSpec b = BlockSpec::for_stage(cfg, i);
    for (std::size_t j = 0; j < cfg.stage_depths[i]; ++j) {
      if (cfg.is_ltb(i, j)) {
        init_ltb(s, init, block_prefix(i, j), b);
      } else {
        init_ecb(s, init, block_prefix(i, j), b);
      }
    }
  }
  return s;
}

/// Stage outputs with spatial sizes H/4, H/8, H/16, H/32.
template <class T>
std::array<Var<T>, kStages> backbone_forward(Var<T> image, const BackboneConfig& cfg, ParamBinder<T>& p) {
  cfg.validate();
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != cfg.image_channels) {
    throw ShapeError("backbone: image must be [" + std::to_string(cfg.image_channels) + ", H, W], got " + shape_str(s));
  }
  cfg.validate_input(s[1], s[2]);
  std::array<Var<T>, kStages> out;
  Var<T> x = image;
  for (std::size_t i = 0; i < kStages; ++i) {
    x = patch_embed(x, p, stage_prefix(i) + ".embed", BackboneConfig::reduction(i), cfg.activation);
    const BlockSpec b = BlockSpec::for_stage(cfg, i);
    for (std::size_t j = 0; j < cfg.stage_depths[i]; ++j) {
      x = cfg.is_ltb(i, j) ? ltb(x, p, block_prefix(i, j), b) : ecb(x, p, block_prefix(i, j), b);
    }
    out[i] = x;
  }
  return out;
}

template <class T>
FeaturePyramid<T> backbone_forward(const Tensor<T>& image, const BackboneConfig& cfg, const ParamStore<T>& store) {
  Graph<T> g;
  ParamBinder<T> p(g, store);
  auto vars = backbone_forward(g.constant(image), cfg, p);
  FeaturePyramid<T> out;
  for (std::size_t i = 0; i < kStages; ++i) out[i] = vars[i].value();
  return out;
}

}  // namespace evit::backbone

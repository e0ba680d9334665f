#pragma once

// Vanilla ViT encoder: patch embedding, class token, learned absolute
// positional embedding, and pre-norm residual MSA/FFN layers. Serves as the
// baseline and as the reference that ESA must reproduce at pooling stride 1.

#include <cmath>
#include <string>
#include <vector>

#include "evit/ops.hpp"
#include "evit/param_store.hpp"

namespace evit::vit {

using kernels::Activation;

/// C = embedding size, N = token count, K = depth.
struct ViTConfig {
  std::size_t patch_size = 16;
  std::size_t embed_dim = 64;
  std::size_t depth = 2;
  std::size_t heads = 4;
  double ffn_ratio = 4.0;
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  std::size_t channels = 3;
  Activation activation = Activation::gelu;

  std::size_t grid_h() const { return image_h / patch_size; }
  std::size_t grid_w() const { return image_w / patch_size; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t ffn_hidden() const { return static_cast<std::size_t>(std::lround(ffn_ratio * static_cast<double>(embed_dim))); }

  void validate() const {
    if (patch_size == 0 || image_h % patch_size || image_w % patch_size) {
      throw ConfigError("vit: image size must be divisible by patch size " + std::to_string(patch_size));
    }
    if (embed_dim == 0 || heads == 0 || embed_dim % heads) {
      throw ConfigError("vit: embed_dim " + std::to_string(embed_dim) + " not divisible by heads " + std::to_string(heads));
    }
    if (ffn_hidden() == 0) throw ConfigError("vit: ffn_ratio yields an empty hidden layer");
  }
};

/// [C,H,W] image -> [(H/p)·(W/p), C·p·p]; row i·(W/p)+j is patch (i, j),
/// flattened in (channel, row, column) order.
template <class T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t p) {
  if (image.rank() != 3) throw ShapeError("patchify: image must be [C,H,W]");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (p == 0 || h % p || w % p) {
    throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch size " + std::to_string(p));
  }
  const std::size_t gh = h / p, gw = w / p;
  Tensor<T> out(Shape{gh * gw, c * p * p});
  for (std::size_t i = 0; i < gh; ++i)
    for (std::size_t j = 0; j < gw; ++j) {
      T* row = out.data().data() + (i * gw + j) * c * p * p;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            row[(ch * p + dy) * p + dx] = image.at({ch, i * p + dy, j * p + dx});
    }
  return out;
}

/// Inverse of patchify.
template <class T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t channels, std::size_t h, std::size_t w, std::size_t p) {
  const std::size_t gh = h / p, gw = w / p;
  if (tokens.shape() != Shape{gh * gw, channels * p * p}) throw ShapeError("unpatchify: token shape mismatch");
  Tensor<T> img(Shape{channels, h, w});
  for (std::size_t i = 0; i < gh; ++i)
    for (std::size_t j = 0; j < gw; ++j)
      for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            img.at({ch, i * p + dy, j * p + dx}) = tokens[(i * gw + j) * channels * p * p + (ch * p + dy) * p + dx];
  return img;
}

template <class T>
void init_linear(ParamStore<T>& s, ParamInit<T>& init, const std::string& prefix, std::size_t din, std::size_t dout) {
  init.weight(s, prefix + ".weight", {din, dout}, din);
  init.zeros(s, prefix + ".bias", {dout});
}

template <class T>
Var<T> linear(ParamBinder<T>& p, const std::string& prefix, Var<T> x) {
  return ops::linear(x, p(prefix + ".weight"), std::optional<Var<T>>(p(prefix + ".bias")));
}

template <class T>
void init_msa(ParamStore<T>& s, ParamInit<T>& init, const std::string& prefix, std::size_t dim) {
  for (const char* n : {"q", "k", "v", "o"}) init_linear(s, init, prefix + "." + n, dim, dim);
}

/// Multi-head self-attention interior (no norm, no residual) on [N, C] tokens.
///
/// Heads are formed by reshaping the projected tokens to [h, N, C/h] and
/// running one batched attention product. If `attention` is given, the
/// [h, N, N] weight tensor is appended to it.
template <class T>
Var<T> msa(Var<T> x, ParamBinder<T>& p, const std::string& prefix, std::size_t heads,
           std::vector<Tensor<T>>* attention = nullptr) {
  if (x.shape().size() != 2) throw ShapeError("msa: tokens must be [N, C]");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (heads == 0 || c % heads) throw ShapeError("msa: channels " + std::to_string(c) + " not divisible by heads");
  const std::size_t dh = c / heads;
  auto split_heads = [&](Var<T> t) {  // [N, C] -> [h, N, dh]
    return ops::transpose(ops::reshape(ops::transpose(t), Shape{heads, dh, n}));
  };
  Var<T> q = split_heads(linear(p, prefix + ".q", x));
  Var<T> k = split_heads(linear(p, prefix + ".k", x));
  Var<T> v = split_heads(linear(p, prefix + ".v", x));
  Var<T> scores = ops::scale(ops::matmul(q, ops::transpose(k)), T{1} / std::sqrt(static_cast<T>(dh)));
  Var<T> attn = ops::softmax(scores, -1);
  if (attention) attention->push_back(attn.value());
  Var<T> mixed = ops::matmul(attn, v);  // [h, N, dh]
  Var<T> merged = ops::transpose(ops::reshape(ops::transpose(mixed), Shape{c, n}));
  return linear(p, prefix + ".o", merged);
}

template <class T>
ParamStore<T> init_vit(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> s;
  ParamInit<T> init(seed);
  const std::size_t c = cfg.embed_dim;
  init_linear(s, init, "patch_embed", cfg.channels * cfg.patch_size * cfg.patch_size, c);
  init.uniform(s, "cls_token", {1, c}, T(-0.02), T(0.02));
  init.uniform(s, "pos_embed", {1 + cfg.num_patches(), c}, T(-0.02), T(0.02));
  for (std::size_t k = 0; k < cfg.depth; ++k) {
    const std::string b = "blocks." + std::to_string(k);
    init.ones(s, b + ".norm1.gamma", {c});
    init.zeros(s, b + ".norm1.beta", {c});
    init_msa(s, init, b + ".attn", c);
    init.ones(s, b + ".norm2.gamma", {c});
    init.zeros(s, b + ".norm2.beta", {c});
    init_linear(s, init, b + ".ffn.fc1", c, cfg.ffn_hidden());
    init_linear(s, init, b + ".ffn.fc2", cfg.ffn_hidden(), c);
  }
  return s;
}

/// Embedded token sequence: token 0 is the class token, then the patches in
/// raster order; positional embeddings are added once.
template <class T>
Var<T> embed(const Tensor<T>& image, const ViTConfig& cfg, ParamBinder<T>& p) {
  if (image.shape() != Shape{cfg.channels, cfg.image_h, cfg.image_w}) {
    throw ConfigError("vit: image shape " + shape_str(image.shape()) + " does not match config");
  }
  Graph<T>& g = p.graph();
  Var<T> patches = g.constant(patchify(image, cfg.patch_size));
  Var<T> tokens = linear(p, "patch_embed", patches);
  Var<T> seq = ops::concat<T>({p("cls_token"), tokens}, 0);
  return ops::add(seq, p("pos_embed"));
}

template <class T>
Var<T> encoder_layer(Var<T> x, const ViTConfig& cfg, ParamBinder<T>& p, const std::string& b) {
  Var<T> y = ops::add(x, msa(ops::layernorm(x, p(b + ".norm1.gamma"), p(b + ".norm1.beta")), p, b + ".attn", cfg.heads));
  Var<T> h = ops::layernorm(y, p(b + ".norm2.gamma"), p(b + ".norm2.beta"));
  Var<T> f = linear(p, b + ".ffn.fc2", ops::activation(linear(p, b + ".ffn.fc1", h), cfg.activation));
  return ops::add(y, f);
}

/// Final class-token features, shape [C].
template <class T>
Var<T> vit_forward(const Tensor<T>& image, const ViTConfig& cfg, ParamBinder<T>& p) {
  cfg.validate();
  Var<T> x = embed(image, cfg, p);
  for (std::size_t k = 0; k < cfg.depth; ++k) x = encoder_layer(x, cfg, p, "blocks." + std::to_string(k));
  return ops::reshape(ops::narrow(x, 0, 0, 1), Shape{cfg.embed_dim});
}

template <class T>
Tensor<T> vit_forward(const Tensor<T>& image, const ViTConfig& cfg, const ParamStore<T>& store) {
  Graph<T> g;
  ParamBinder<T> p(g, store);
  return vit_forward(image, cfg, p).value();
}

}  // namespace evit::vit

#pragma once

// Closed-form parameter and multiply-accumulate counts for the backbone.
// These formulas are written independently of the initializers and layers;
// tests compare them against ParamStore enumeration and the Graph's runtime
// MAC counter.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evit/backbone_config.hpp"

namespace evit::accounting {

using u64 = std::uint64_t;

struct Term {
  std::string name;
  u64 value = 0;
};

struct BlockCount {
  std::string name;  // e.g. "stage3.block1"
  std::string kind;  // "embed", "ecb" or "ltb"
  std::size_t lattice_h = 0, lattice_w = 0;
  std::vector<Term> terms;

  u64 total() const {
    u64 t = 0;
    for (const auto& x : terms) t += x.value;
    return t;
  }
  u64 term(std::string_view n) const {
    for (const auto& x : terms)
      if (x.name == n) return x.value;
    return 0;
  }
};

struct Report {
  std::vector<BlockCount> blocks;
  u64 total() const {
    u64 t = 0;
    for (const auto& b : blocks) t += b.total();
    return t;
  }
};

// --- parameters -----------------------------------------------------------

inline u64 conv_params(u64 cout, u64 cin_per_group, u64 k, bool bias = true) {
  return cout * cin_per_group * k * k + (bias ? cout : 0);
}
inline u64 linear_params(u64 din, u64 dout) { return din * dout + dout; }

inline std::vector<Term> lffn_params(const BackboneConfig& c, u64 d) {
  const u64 hid = c.lffn_hidden(d);
  std::vector<Term> t{{"lffn.fc1", conv_params(hid, d, 1)}};
  if (c.lffn_depthwise) t.push_back({"lffn.dw", conv_params(hid, 1, 3)});
  t.push_back({"lffn.fc2", conv_params(d, hid, 1)});
  return t;
}

inline std::vector<Term> mhca_params(const BackboneConfig& c, u64 d, u64 heads) {
  return {{"mhca.group", conv_params(d, d / heads, c.mhca_kernel, false)},
          {"mhca.norm", 2 * d},
          {"mhca.proj", conv_params(d, d, 1)}};
}

/// Per-block parameter breakdown in store order.
inline Report param_report(const BackboneConfig& c) {
  c.validate();
  Report r;
  for (std::size_t i = 0; i < kStages; ++i) {
    const u64 w = c.stage_widths[i], cin = c.stage_in_channels(i), heads = c.stage_heads[i];
    BlockCount e{"stage" + std::to_string(i + 1) + ".embed", "embed", 0, 0, {}};
    if (BackboneConfig::reduction(i) == 4) {
      e.terms = {{"conv1", conv_params(w, cin, 3)}, {"norm", 2 * w}, {"conv2", conv_params(w, w, 3)}};
    } else {
      e.terms = {{"conv", conv_params(w, cin, 3)}};
    }
    r.blocks.push_back(e);
    for (std::size_t j = 0; j < c.stage_depths[i]; ++j) {
      BlockCount b{"stage" + std::to_string(i + 1) + ".block" + std::to_string(j), "", 0, 0, {}};
      if (c.is_ltb(i, j)) {
        const u64 half = w / 2;
        b.kind = "ltb";
        b.terms = {{"esa_norm", 2 * half}, {"esa.qkvo", 4 * linear_params(half, half)}};
        for (auto t : mhca_params(c, half, heads)) b.terms.push_back(t);
        b.terms.push_back({"fuse", conv_params(w, w, 1)});
      } else {
        b.kind = "ecb";
        b.terms = mhca_params(c, w, heads);
      }
      for (auto t : lffn_params(c, w)) b.terms.push_back(t);
      r.blocks.push_back(b);
    }
  }
  return r;
}

inline u64 count_params(const BackboneConfig& c) { return param_report(c).total(); }

// --- multiply-accumulates -------------------------------------------------

/// MACs of one ESA call on an h×w lattice of width d: projections plus the
/// attention-score and value-mix products, each N·(N/s²)·d.
inline std::vector<Term> esa_macs(u64 h, u64 w, u64 d, u64 s) {
  const u64 n = h * w;
  const u64 m = (h / s) * (w / s);
  return {{"esa.q", n * d * d},           {"esa.k", n * d * d}, {"esa.v", n * d * d},
          {"esa.attn_scores", n * m * d}, {"esa.attn_mix", n * m * d}, {"esa.o", n * d * d}};
}

inline u64 esa_attention_macs(u64 h, u64 w, u64 d, u64 s) {
  const u64 n = h * w, m = (h / s) * (w / s);
  return 2 * n * m * d;
}

inline std::vector<Term> mhca_macs(const BackboneConfig& c, u64 n, u64 d, u64 heads) {
  const u64 k = c.mhca_kernel;
  return {{"mhca.group", n * d * (d / heads) * k * k}, {"mhca.proj", n * d * d}};
}

inline std::vector<Term> lffn_macs(const BackboneConfig& c, u64 n, u64 d) {
  const u64 hid = c.lffn_hidden(d);
  std::vector<Term> t{{"lffn.fc1", n * d * hid}};
  if (c.lffn_depthwise) t.push_back({"lffn.dw", n * hid * 9});
  t.push_back({"lffn.fc2", n * hid * d});
  return t;
}

/// Per-block MAC report (conv2d and matmul work) for an H×W input.
inline Report count_flops(const BackboneConfig& c, std::size_t height, std::size_t width) {
  c.validate();
  c.validate_input(height, width);
  Report r;
  for (std::size_t i = 0; i < kStages; ++i) {
    const u64 w = c.stage_widths[i], cin = c.stage_in_channels(i), heads = c.stage_heads[i];
    const u64 lh = height / BackboneConfig::cumulative_reduction(i);
    const u64 lw = width / BackboneConfig::cumulative_reduction(i);
    const u64 n = lh * lw;
    BlockCount e{"stage" + std::to_string(i + 1) + ".embed", "embed", lh, lw, {}};
    if (BackboneConfig::reduction(i) == 4) {
      e.terms = {{"conv1", (2 * lh) * (2 * lw) * w * cin * 9}, {"conv2", n * w * w * 9}};
    } else {
      e.terms = {{"conv", n * w * cin * 9}};
    }
    r.blocks.push_back(e);
    for (std::size_t j = 0; j < c.stage_depths[i]; ++j) {
      BlockCount b{"stage" + std::to_string(i + 1) + ".block" + std::to_string(j), "", lh, lw, {}};
      if (c.is_ltb(i, j)) {
        const u64 half = w / 2;
        b.kind = "ltb";
        b.terms = esa_macs(lh, lw, half, c.esa_strides[i]);
        for (auto t : mhca_macs(c, n, half, heads)) b.terms.push_back(t);
        b.terms.push_back({"fuse", n * w * w});
      } else {
        b.kind = "ecb";
        b.terms = mhca_macs(c, n, w, heads);
      }
      for (auto t : lffn_macs(c, n, w)) b.terms.push_back(t);
      r.blocks.push_back(b);
    }
  }
  return r;
}

}  // namespace evit::accounting

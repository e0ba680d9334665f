#pragma once

// Finite-difference checks for every backbone block type plus the full
// pyramid, in f64, with the shapes derived from a BackboneConfig.

#include <chrono>
#include <string>
#include <vector>

#include "evit/backbone.hpp"
#include "evit/grad_check.hpp"

namespace evit::diagnostics {

struct BlockCheck {
  std::string block;
  GradCheckReport report;
  double seconds = 0;
};

struct SuiteOptions {
  GradCheckOptions check;
  std::size_t end_to_end_size = 32;
  bool end_to_end = true;
};

namespace detail {

inline Tensor<double> random_input(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor<double>::uniform(std::move(s), -1.0, 1.0, rng);
}

inline std::size_t first_ltb_stage(const BackboneConfig& c) {
  for (std::size_t i = 0; i < kStages; ++i)
    if (c.stage_has_ltb(i)) return i;
  return kStages - 1;
}

template <class Init, class Fwd>
BlockCheck check(const std::string& name, Init&& init, Fwd&& fwd, const Tensor<double>& x, std::uint64_t seed,
                 const GradCheckOptions& opt) {
  ParamStore<double> store;
  ParamInit<double> pinit(seed);
  init(store, pinit);
  std::mt19937_64 rng(seed + 1);
  jitter_affine(store, rng);
  const auto t0 = std::chrono::steady_clock::now();
  BlockCheck r{name, {}, 0};
  try {
    r.report = grad_check_layer(fwd, x, store, opt);
  } catch (const NumericError& e) {
    throw NumericError(name + ": " + e.what());
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace detail

/// One row per block type (MHCA, ESA, LFFN, ECB, LTB, patch-embed) and one
/// for the whole pyramid.
inline std::vector<BlockCheck> gradient_suite(const BackboneConfig& cfg, std::uint64_t seed, const SuiteOptions& o = {}) {
  using backbone::BlockSpec;
  cfg.validate();
  std::vector<BlockCheck> rows;
  const auto& opt = o.check;

  const BlockSpec s0 = BlockSpec::for_stage(cfg, 0);
  const std::size_t lt = detail::first_ltb_stage(cfg);
  BlockSpec sl = BlockSpec::for_stage(cfg, lt);
  const std::size_t lat = std::max<std::size_t>(4, 2 * sl.esa_stride);
  const std::size_t half = sl.width / 2;

  rows.push_back(detail::check(
      "mhca",
      [&](ParamStore<double>& s, ParamInit<double>& i) { backbone::init_mhca(s, i, "m", s0.width, s0.heads, s0.mhca_kernel); },
      [&](Graph<double>&, Var<double> x, ParamBinder<double>& p) {
        return backbone::mhca(x, p, "m", s0.heads, s0.mhca_kernel, s0.activation);
      },
      detail::random_input({s0.width, 4, 4}, seed + 10), seed + 11, opt));

  rows.push_back(detail::check(
      "esa", [&](ParamStore<double>& s, ParamInit<double>& i) { backbone::init_esa(s, i, "e", half); },
      [&](Graph<double>&, Var<double> x, ParamBinder<double>& p) {
        return backbone::esa(x, lat, lat, p, "e", sl.heads, sl.esa_stride);
      },
      detail::random_input({lat * lat, half}, seed + 20), seed + 21, opt));

  rows.push_back(detail::check(
      "lffn", [&](ParamStore<double>& s, ParamInit<double>& i) { backbone::init_lffn(s, i, "f", s0.width, s0.lffn); },
      [&](Graph<double>&, Var<double> x, ParamBinder<double>& p) { return backbone::lffn(x, 4, 4, p, "f", s0.lffn); },
      detail::random_input({16, s0.width}, seed + 30), seed + 31, opt));

  rows.push_back(detail::check(
      "ecb", [&](ParamStore<double>& s, ParamInit<double>& i) { backbone::init_ecb(s, i, "b", s0); },
      [&](Graph<double>&, Var<double> x, ParamBinder<double>& p) { return backbone::ecb(x, p, "b", s0); },
      detail::random_input({s0.width, 4, 4}, seed + 40), seed + 41, opt));

  rows.push_back(detail::check(
      "ltb", [&](ParamStore<double>& s, ParamInit<double>& i) { backbone::init_ltb(s, i, "b", sl); },
      [&](Graph<double>&, Var<double> x, ParamBinder<double>& p) { return backbone::ltb(x, p, "b", sl); },
      detail::random_input({sl.width, lat, lat}, seed + 50), seed + 51, opt));

  rows.push_back(detail::check(
      "patch_embed",
      [&](ParamStore<double>& s, ParamInit<double>& i) {
        backbone::init_patch_embed(s, i, "p4", cfg.image_channels, s0.width, 4);
        backbone::init_patch_embed(s, i, "p2", s0.width, cfg.stage_widths[1], 2);
      },
      [&](Graph<double>&, Var<double> x, ParamBinder<double>& p) {
        return backbone::patch_embed(backbone::patch_embed(x, p, "p4", 4, cfg.activation), p, "p2", 2, cfg.activation);
      },
      detail::random_input({cfg.image_channels, 8, 8}, seed + 60), seed + 61, opt));

  if (o.end_to_end) {
    const std::size_t n = o.end_to_end_size;
    cfg.validate_input(n, n);
    auto store = backbone::init_backbone<double>(cfg, seed + 70);
    std::mt19937_64 rng(seed + 71);
    jitter_affine(store, rng);
    const auto t0 = std::chrono::steady_clock::now();
    BlockCheck r{"backbone", {}, 0};
    try {
      r.report = grad_check_layer(
          [&](Graph<double>&, Var<double> x, ParamBinder<double>& p) {
            auto pyr = backbone::backbone_forward(x, cfg, p);
            Var<double> total = ops::sum(pyr[0]);
            for (std::size_t i = 1; i < kStages; ++i) total = ops::add(total, ops::sum(pyr[i]));
            return total;
          },
          detail::random_input({cfg.image_channels, n, n}, seed + 72), store, opt);
    } catch (const NumericError& e) {
      throw NumericError(std::string("backbone: ") + e.what());
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(r);
  }
  return rows;
}

}  // namespace evit::diagnostics

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "evit/kernels.hpp"

namespace evit {

using kernels::Activation;

inline constexpr std::size_t kStages = 4;

/// Every hyperparameter of the 4-stage pyramid.
///
/// Stage i (0-based) embeds with reduction 4 for i == 0 and 2 otherwise, so
/// the stage lattices are H/4, H/8, H/16 and H/32.
struct BackboneConfig {
  std::array<std::size_t, kStages> stage_depths{2, 2, 2, 2};
  std::array<std::size_t, kStages> stage_widths{32, 64, 128, 256};
  std::array<std::size_t, kStages> stage_heads{1, 2, 4, 8};
  std::array<std::size_t, kStages> esa_strides{8, 4, 2, 1};
  double lffn_ratio = 3.0;
  bool lffn_depthwise = true;
  std::size_t mhca_kernel = 3;
  Activation activation = Activation::gelu;
  // Block indices per stage that are LTBs; the rest are ECBs.
  std::array<std::vector<std::size_t>, kStages> ltb_positions{{{}, {}, {1}, {1}}};
  std::size_t image_channels = 3;

  static constexpr std::size_t reduction(std::size_t stage) { return stage == 0 ? 4 : 2; }
  static constexpr std::size_t cumulative_reduction(std::size_t stage) { return std::size_t{4} << stage; }

  std::size_t stage_in_channels(std::size_t stage) const {
    return stage == 0 ? image_channels : stage_widths[stage - 1];
  }

  bool is_ltb(std::size_t stage, std::size_t block) const {
    const auto& v = ltb_positions[stage];
    return std::find(v.begin(), v.end(), block) != v.end();
  }

  bool stage_has_ltb(std::size_t stage) const { return !ltb_positions[stage].empty(); }

  std::size_t lffn_hidden(std::size_t d) const {
    return static_cast<std::size_t>(std::lround(lffn_ratio * static_cast<double>(d)));
  }

  /// Last block of stages 3 and 4 (or none, for empty stages).
  static std::array<std::vector<std::size_t>, kStages> default_ltb_positions(
      const std::array<std::size_t, kStages>& depths) {
    std::array<std::vector<std::size_t>, kStages> p{};
    for (std::size_t s : {std::size_t{2}, std::size_t{3}})
      if (depths[s] > 0) p[s] = {depths[s] - 1};
    return p;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("backbone config: " + m); };
    if (image_channels == 0) fail("image_channels must be >= 1");
    if (mhca_kernel == 0 || mhca_kernel % 2 == 0) fail("mhca_kernel must be odd, got " + std::to_string(mhca_kernel));
    if (!(lffn_ratio > 0)) fail("lffn_ratio must be positive");
    for (std::size_t i = 0; i < kStages; ++i) {
      const std::string st = "stage " + std::to_string(i + 1);
      const std::size_t d = stage_widths[i], h = stage_heads[i];
      if (d == 0) fail(st + ": width must be >= 1");
      if (h == 0) fail(st + ": heads must be >= 1");
      if (esa_strides[i] == 0) fail(st + ": esa stride must be >= 1");
      if (d % h) fail(st + ": width " + std::to_string(d) + " not divisible by heads " + std::to_string(h));
      if (lffn_hidden(d) == 0) fail(st + ": lffn_ratio yields an empty hidden layer");
      for (std::size_t b : ltb_positions[i]) {
        if (b >= stage_depths[i]) fail(st + ": ltb position " + std::to_string(b) + " exceeds depth");
      }
      if (stage_has_ltb(i)) {
        if (d % 2) fail(st + ": LTB requires an even width, got " + std::to_string(d));
        if ((d / 2) % h) fail(st + ": LTB half-width " + std::to_string(d / 2) + " not divisible by heads " + std::to_string(h));
      }
    }
  }

  /// Input-resolution requirements: 32-divisible sides, and every LTB stage
  /// lattice divisible by that stage's pooling stride.
  void validate_input(std::size_t h, std::size_t w) const {
    if (h % 32 || w % 32 || h == 0 || w == 0) {
      throw ShapeError("backbone input " + std::to_string(h) + "x" + std::to_string(w) + " must be divisible by 32");
    }
    for (std::size_t i = 0; i < kStages; ++i) {
      if (!stage_has_ltb(i)) continue;
      const std::size_t r = cumulative_reduction(i), s = esa_strides[i];
      if ((h / r) % s || (w / r) % s) {
        throw ShapeError("stage " + std::to_string(i + 1) + " lattice " + std::to_string(h / r) + "x" +
                         std::to_string(w / r) + " not divisible by esa stride " + std::to_string(s));
      }
    }
  }

  /// Desk-scale configuration used by tests, gradient checks and toy training.
  static BackboneConfig tiny() {
    BackboneConfig c;
    c.stage_depths = {1, 1, 1, 1};
    c.stage_widths = {8, 16, 32, 64};
    c.stage_heads = {1, 2, 2, 4};
    c.ltb_positions = default_ltb_positions(c.stage_depths);
    return c;
  }
};

inline nlohmann::json to_json(const BackboneConfig& c) {
  nlohmann::json j;
  j["stage_depths"] = c.stage_depths;
  j["stage_widths"] = c.stage_widths;
  j["stage_heads"] = c.stage_heads;
  j["esa_strides"] = c.esa_strides;
  j["lffn_ratio"] = c.lffn_ratio;
  j["lffn_depthwise"] = c.lffn_depthwise;
  j["mhca_kernel"] = c.mhca_kernel;
  j["activation"] = std::string(kernels::activation_name(c.activation));
  j["ltb_positions"] = c.ltb_positions;
  j["image_channels"] = c.image_channels;
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  static const std::array<const char*, 10> known{"stage_depths",  "stage_widths",   "stage_heads", "esa_strides",
                                                 "lffn_ratio",    "lffn_depthwise", "mhca_kernel", "activation",
                                                 "ltb_positions", "image_channels"};
  if (!j.is_object()) throw ConfigError("backbone config: document must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
      throw ConfigError("backbone config: unknown key '" + key + "'");
    }
  }
  BackboneConfig c;
  try {
    auto quad = [&](const char* key, std::array<std::size_t, kStages>& dst) {
      if (!j.contains(key)) return;
      const auto v = j.at(key).get<std::vector<long long>>();
      if (v.size() != kStages) throw ConfigError(std::string("backbone config: '") + key + "' needs 4 entries");
      for (std::size_t i = 0; i < kStages; ++i) {
        if (v[i] < 0) throw ConfigError(std::string("backbone config: '") + key + "' entries must be non-negative");
        dst[i] = static_cast<std::size_t>(v[i]);
      }
    };
    quad("stage_depths", c.stage_depths);
    quad("stage_widths", c.stage_widths);
    quad("stage_heads", c.stage_heads);
    quad("esa_strides", c.esa_strides);
    if (j.contains("lffn_ratio")) c.lffn_ratio = j.at("lffn_ratio").get<double>();
    if (j.contains("lffn_depthwise")) c.lffn_depthwise = j.at("lffn_depthwise").get<bool>();
    if (j.contains("mhca_kernel")) c.mhca_kernel = j.at("mhca_kernel").get<std::size_t>();
    if (j.contains("activation")) c.activation = kernels::parse_activation(j.at("activation").get<std::string>());
    if (j.contains("image_channels")) c.image_channels = j.at("image_channels").get<std::size_t>();
    if (j.contains("ltb_positions")) {
      const auto v = j.at("ltb_positions").get<std::vector<std::vector<std::size_t>>>();
      if (v.size() != kStages) throw ConfigError("backbone config: 'ltb_positions' needs 4 lists");
      for (std::size_t i = 0; i < kStages; ++i) c.ltb_positions[i] = v[i];
    } else {
      c.ltb_positions = BackboneConfig::default_ltb_positions(c.stage_depths);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("backbone config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace evit

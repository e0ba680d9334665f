#pragma once

// Synthetic shape classification used to show the backbone trains: colored
// squares / disks / crosses / triangles on uniform noise, global-average-pool
// head, softmax cross-entropy, plain gradient descent.

#include <cstdint>
#include <random>
#include <vector>

#include "evit/backbone.hpp"

namespace evit::toy {

struct ToyDataset {
  std::vector<Tensor<float>> images;  // [3, size, size], values in [0, 1]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
};

struct ToyOptions {
  std::size_t num_images = 32;
  std::size_t num_classes = 3;  // 2..4
  std::size_t image_size = 32;
  std::size_t steps = 200;
  float learning_rate = 0.1f;
};

namespace detail {
// Shape of class c centered at (cy, cx) with half-size r.
inline bool inside(std::size_t c, double y, double x, double cy, double cx, double r) {
  const double dy = y - cy, dx = x - cx;
  switch (c) {
    case 0: return std::abs(dy) <= r && std::abs(dx) <= r;
    case 1: return dy * dy + dx * dx <= r * r;
    case 2: return (std::abs(dy) <= r / 3 && std::abs(dx) <= r) || (std::abs(dx) <= r / 3 && std::abs(dy) <= r);
    default: return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2;
  }
}
}  // namespace detail

/// Balanced labels (i mod K); each class has its own dominant color.
inline ToyDataset make_dataset(const ToyOptions& o, std::uint64_t seed) {
  if (o.num_classes < 2 || o.num_classes > 4) throw ConfigError("toy: num_classes must be in [2, 4]");
  if (o.num_images == 0) throw ConfigError("toy: num_images must be >= 1");
  static const float colors[4][3] = {{0.9f, 0.15f, 0.1f}, {0.1f, 0.8f, 0.2f}, {0.15f, 0.2f, 0.9f}, {0.9f, 0.85f, 0.1f}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> noise(0.0f, 0.35f);
  const double n = static_cast<double>(o.image_size);
  std::uniform_real_distribution<double> radius(n * 0.18, n * 0.3);
  ToyDataset ds;
  ds.num_classes = o.num_classes;
  for (std::size_t i = 0; i < o.num_images; ++i) {
    const std::size_t c = i % o.num_classes;
    const double r = radius(rng);
    std::uniform_real_distribution<double> center(r, n - r);
    const double cy = center(rng), cx = center(rng);
    Tensor<float> img(Shape{3, o.image_size, o.image_size});
    for (std::size_t y = 0; y < o.image_size; ++y)
      for (std::size_t x = 0; x < o.image_size; ++x) {
        const bool in = detail::inside(c, double(y) + 0.5, double(x) + 0.5, cy, cx, r);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const float bg = noise(rng);
          img[(ch * o.image_size + y) * o.image_size + x] = in ? colors[c][ch] : bg;
        }
      }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(c);
  }
  return ds;
}

/// Backbone parameters plus a linear classifier on the pooled last stage.
inline ParamStore<float> init_classifier(const BackboneConfig& cfg, std::size_t num_classes, std::uint64_t seed) {
  ParamStore<float> s = backbone::init_backbone<float>(cfg, seed);
  ParamInit<float> init(seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t d = cfg.stage_widths[kStages - 1];
  init.weight(s, "head.weight", {d, num_classes}, d);
  init.zeros(s, "head.bias", {num_classes});
  return s;
}

/// Mean cross-entropy over the whole dataset; gradients land in `store`.
inline float loss_and_grad(ParamStore<float>& store, const BackboneConfig& cfg, const ToyDataset& ds) {
  Graph<float> g;
  ParamBinder<float> p(g, store, true);
  std::vector<Var<float>> logits;
  logits.reserve(ds.images.size());
  for (const auto& img : ds.images) {
    auto pyr = backbone::backbone_forward(g.constant(img), cfg, p);
    logits.push_back(vit::linear(p, "head", ops::global_avg_pool(pyr[kStages - 1])));
  }
  Var<float> all = logits.size() == 1 ? logits[0] : ops::concat<float>(std::span<const Var<float>>(logits), 0);
  Var<float> loss = ops::cross_entropy(all, ds.labels);
  g.backward(loss);
  store.zero_grad();
  p.collect_grads(store);
  return loss.value()[0];
}

/// Full-batch gradient descent. Returns steps + 1 losses: the initial loss,
/// then the loss after each update.
inline std::vector<float> train(ParamStore<float>& store, const BackboneConfig& cfg, const ToyDataset& ds,
                                std::size_t steps, float lr) {
  std::vector<float> losses;
  losses.reserve(steps + 1);
  for (std::size_t step = 0;; ++step) {
    const float l = loss_and_grad(store, cfg, ds);
    if (!std::isfinite(l)) throw NumericError("toy training diverged at step " + std::to_string(step));
    losses.push_back(l);
    if (step == steps) break;
    for (auto& e : store.entries()) {
      auto v = e.value.data();
      auto gr = e.grad.data();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * gr[i];
    }
  }
  return losses;
}

}  // namespace evit::toy

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evit/vit.hpp"

using namespace evit;

namespace {

Tensor<double> rnd(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  return Tensor<double>::uniform(std::move(s), lo, hi, rng);
}

ParamStore<double> msa_store(std::size_t c, std::uint64_t seed) {
  ParamStore<double> s;
  ParamInit<double> init(seed);
  vit::init_msa(s, init, "attn", c);
  std::mt19937_64 rng(seed + 1);
  randomize(s, rng);
  return s;
}

Tensor<double> run_msa(const Tensor<double>& x, const ParamStore<double>& s, std::size_t heads,
                       std::vector<Tensor<double>>* attn = nullptr) {
  Graph<double> g;
  ParamBinder<double> p(g, s);
  return vit::msa(g.constant(x), p, "attn", heads, attn).value();
}

}  // namespace

TEST(Patchify, SinglePatchIsFlattenedImage) {
  auto img = rnd({3, 8, 8}, 1);
  auto t = vit::patchify(img, 8);
  EXPECT_EQ(t.shape(), (Shape{1, 192}));
  EXPECT_EQ(t.vec(), img.vec());
}

TEST(Patchify, PartitionRoundTrip) {
  auto img = rnd({3, 12, 8}, 2);
  auto t = vit::patchify(img, 4);
  EXPECT_EQ(t.shape(), (Shape{6, 48}));
  EXPECT_EQ(vit::unpatchify(t, 3, 12, 8, 4), img);
  EXPECT_THROW(vit::patchify(img, 5), ShapeError);
}

TEST(Patchify, RampQuadrantMeans) {
  Tensor<double> img(Shape{1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) img[i] = double(i);
  auto t = vit::patchify(img, 2);
  // Quadrant (i, j) covers rows 2i..2i+1, cols 2j..2j+1.
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double ref = 0;
      for (std::size_t y = 2 * i; y < 2 * i + 2; ++y)
        for (std::size_t x = 2 * j; x < 2 * j + 2; ++x) ref += img.at({0, y, x});
      double got = 0;
      for (std::size_t k = 0; k < 4; ++k) got += t.at({i * 2 + j, k});
      EXPECT_EQ(got / 4, ref / 4);
    }
}

TEST(Msa, SingleTokenAttendsToItself) {
  const std::size_t c = 4;
  auto s = msa_store(c, 3);
  auto x = rnd({1, c}, 4);
  std::vector<Tensor<double>> attn;
  auto y = run_msa(x, s, 2, &attn);
  ASSERT_EQ(attn.size(), 1u);
  for (double a : attn[0].data()) EXPECT_EQ(a, 1.0);
  // projection chain: (x Wv + bv) Wo + bo
  Tensor<double> v(Shape{1, c}), ref(Shape{1, c});
  for (std::size_t j = 0; j < c; ++j) {
    double acc = s.value("attn.v.bias")[j];
    for (std::size_t i = 0; i < c; ++i) acc += x[i] * s.value("attn.v.weight").at({i, j});
    v[j] = acc;
  }
  for (std::size_t j = 0; j < c; ++j) {
    double acc = s.value("attn.o.bias")[j];
    for (std::size_t i = 0; i < c; ++i) acc += v[i] * s.value("attn.o.weight").at({i, j});
    ref[j] = acc;
  }
  EXPECT_LE(max_abs_diff(y, ref), 1e-12);
}

TEST(Msa, TwoOrthogonalTokensByHand) {
  ParamStore<double> s;
  for (const char* n : {"q", "k", "v", "o"}) {
    Tensor<double> eye(Shape{2, 2});
    eye.at({0, 0}) = eye.at({1, 1}) = 1;
    s.add(std::string("attn.") + n + ".weight", eye);
    s.add(std::string("attn.") + n + ".bias", Tensor<double>(Shape{2}));
  }
  Tensor<double> x(Shape{2, 2}, {1, 0, 0, 1});
  auto y = run_msa(x, s, 1);
  // scores = I / sqrt(2); each row puts weight e^a / (e^a + 1) on itself.
  const double a = 1 / std::sqrt(2.0);
  const double p = std::exp(a) / (std::exp(a) + 1);
  EXPECT_NEAR(y.at({0, 0}), p, 1e-15);
  EXPECT_NEAR(y.at({0, 1}), 1 - p, 1e-15);
  EXPECT_NEAR(y.at({1, 0}), 1 - p, 1e-15);
  EXPECT_NEAR(y.at({1, 1}), p, 1e-15);
}

TEST(Msa, RowStochasticAndPermutationEquivariant) {
  const std::size_t n = 6, c = 8;
  auto s = msa_store(c, 5);
  auto x = rnd({n, c}, 6);
  std::vector<Tensor<double>> attn;
  auto y = run_msa(x, s, 4, &attn);
  ASSERT_EQ(attn[0].shape(), (Shape{4, n, n}));
  for (std::size_t r = 0; r < 4 * n; ++r) {
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += attn[0][r * n + j];
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(7);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor<double> xp(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) xp.at({i, j}) = x.at({perm[i], j});
  auto yp = run_msa(xp, s, 4);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) EXPECT_NEAR(yp.at({i, j}), y.at({perm[i], j}), 1e-12);
}

TEST(Msa, HeadDivisibility) {
  auto s = msa_store(6, 1);
  EXPECT_THROW(run_msa(rnd({2, 6}, 1), s, 4), ShapeError);
}

namespace {
vit::ViTConfig small_cfg(std::size_t depth) {
  vit::ViTConfig c;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.depth = depth;
  c.heads = 2;
  c.image_h = 8;
  c.image_w = 12;
  return c;
}
}  // namespace

TEST(VitForward, OutputShape) {
  for (std::size_t depth : {0u, 1u, 2u}) {
    auto cfg = small_cfg(depth);
    auto s = vit::init_vit<double>(cfg, 1);
    auto y = vit::vit_forward(rnd({3, 8, 12}, 2), cfg, s);
    EXPECT_EQ(y.shape(), (Shape{8}));
  }
}

TEST(VitForward, EmptyEncoderReturnsEmbeddedClassToken) {
  auto cfg = small_cfg(0);
  auto s = vit::init_vit<double>(cfg, 1);
  auto y = vit::vit_forward(rnd({3, 8, 12}, 2), cfg, s);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(y[j], s.value("cls_token")[j] + s.value("pos_embed").at({0, j}));
}

TEST(VitForward, ZeroBlocksLeaveResidualTrace) {
  auto cfg = small_cfg(2);
  auto s = vit::init_vit<double>(cfg, 1);
  for (auto& e : s.entries())
    if (e.name.rfind("blocks.", 0) == 0) e.value.fill(0.0);
  auto y = vit::vit_forward(rnd({3, 8, 12}, 3), cfg, s);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(y[j], s.value("cls_token")[j] + s.value("pos_embed").at({0, j}));
}

TEST(VitForward, PositionalEmbeddingBreaksPermutationInvariance) {
  auto cfg = small_cfg(1);
  auto s = vit::init_vit<double>(cfg, 1);
  std::mt19937_64 rng(9);
  randomize(s, rng);
  auto img = rnd({3, 8, 12}, 4);
  // Swap two patches: the same multiset of tokens, in a different order.
  auto t = vit::patchify(img, 4);
  for (std::size_t k = 0; k < t.dim(1); ++k) std::swap(t.at({0, k}), t.at({5, k}));
  auto img2 = vit::unpatchify(t, 3, 8, 12, 4);
  EXPECT_GT(max_abs_diff(vit::vit_forward(img, cfg, s), vit::vit_forward(img2, cfg, s)), 1e-6);
}

TEST(VitForward, ConfigErrors) {
  auto cfg = small_cfg(1);
  auto s = vit::init_vit<double>(cfg, 1);
  EXPECT_THROW(vit::vit_forward(rnd({3, 8, 8}, 1), cfg, s), ConfigError);
  cfg.patch_size = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

// Run the tiny backbone on a random image and print the feature pyramid.

#include <cstdio>
#include <random>

#include "evit/accounting.hpp"
#include "evit/backbone.hpp"

int main() {
  using namespace evit;
  const auto cfg = BackboneConfig::tiny();
  const auto params = backbone::init_backbone<float>(cfg, /*seed=*/1);

  std::mt19937_64 rng(2);
  const auto image = Tensor<float>::uniform({3, 128, 128}, 0.0f, 1.0f, rng);
  const auto pyramid = backbone::backbone_forward(image, cfg, params);

  for (std::size_t i = 0; i < kStages; ++i) std::printf("stage%zu %s\n", i + 1, shape_str(pyramid[i].shape()).c_str());
  std::printf("parameters %zu\n", params.total_params());
  std::printf("MACs at 128x128 %llu\n",
              static_cast<unsigned long long>(accounting::count_flops(cfg, 128, 128).total()));
}

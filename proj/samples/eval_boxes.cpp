// Score a handful of detections against ground truth.

#include <cstdio>

#include "evit/detect_eval.hpp"

int main() {
  using namespace evit::eval;
  const std::vector<GroundTruthBox> gts{
      {"img0", {10, 10, 50, 50}, 0},
      {"img0", {60, 60, 90, 100}, 1},
      {"img1", {0, 0, 30, 30}, 0},
  };
  const std::vector<Detection> dets{
      {"img0", {12, 10, 50, 52}, 0, 0.95},
      {"img0", {61, 58, 90, 100}, 1, 0.80},
      {"img1", {40, 40, 60, 60}, 0, 0.70},  // false positive
      {"img1", {2, 0, 30, 28}, 0, 0.40},
  };
  const auto report = evaluate(dets, gts);
  std::printf("AP %.4f  AP50 %.4f  AP75 %.4f\n", report.ap, report.ap50, report.ap75);
  for (const auto& [cls, row] : report.per_class) std::printf("class %d AP@0.5 %.4f\n", cls, row.front());
}

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "evit/detect_eval.hpp"
#include "evit/gtsdb.hpp"
#include "oracles.hpp"

using namespace evit;
using namespace evit::eval;

namespace {

// Unit cells of the integer grid covered by a box with integer corners.
bool covers(const BBox& b, int x, int y) { return x >= b.x1 && x + 1 <= b.x2 && y >= b.y1 && y + 1 <= b.y2; }

double raster_iou(const BBox& a, const BBox& b) {
  int inter = 0, uni = 0;
  for (int y = -1; y < 64; ++y)
    for (int x = -1; x < 64; ++x) {
      const bool ia = covers(a, x, y), ib = covers(b, x, y);
      inter += ia && ib;
      uni += ia || ib;
    }
  return double(inter) / double(uni);
}

BBox random_int_box(std::mt19937_64& rng, int extent = 40) {
  std::uniform_int_distribution<int> pos(0, extent - 2);
  const int x1 = pos(rng), y1 = pos(rng);
  std::uniform_int_distribution<int> wx(1, extent - x1), wy(1, extent - y1);
  return {double(x1), double(y1), double(x1 + wx(rng)), double(y1 + wy(rng))};
}

Detection det(std::string img, BBox b, int cls, double score) { return {std::move(img), b, cls, score}; }
GroundTruthBox gt(std::string img, BBox b, int cls) { return {std::move(img), b, cls}; }

std::string fixture(const std::string& name) { return std::string(EVIT_TEST_DATA) + "/eval_fixture/" + name; }

}  // namespace

TEST(Iou, Examples) {
  const BBox a{0, 0, 10, 10};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, {20, 20, 30, 30}), 0.0);
  EXPECT_EQ(iou(a, {10, 0, 20, 10}), 0.0);  // shared edge only
  const BBox b{5, 0, 15, 10};
  EXPECT_DOUBLE_EQ(iou(a, b), raster_iou(a, b));
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
}

TEST(Iou, MatchesRasterCountOnIntegerBoxes) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const BBox a = random_int_box(rng), b = random_int_box(rng);
    EXPECT_NEAR(iou(a, b), raster_iou(a, b), 1e-12);
  }
}

TEST(Iou, SymmetricExactly) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0, 50), w(0.1, 30);
  for (int i = 0; i < 500; ++i) {
    const double ax = u(rng), ay = u(rng), bx = u(rng), by = u(rng);
    const BBox a{ax, ay, ax + w(rng), ay + w(rng)}, b{bx, by, bx + w(rng), by + w(rng)};
    EXPECT_EQ(iou(a, b), iou(b, a));
    EXPECT_GE(iou(a, b), 0.0);
    EXPECT_LE(iou(a, b), 1.0);
  }
}

TEST(Iou, ShrinkingInsideDecreasesStrictly) {
  const BBox a{0, 0, 20, 16};
  double prev = iou(a, a);
  for (int k = 1; k < 8; ++k) {
    const BBox b{double(k), double(k), 20.0 - k, 16.0 - k};
    const double v = iou(a, b);
    EXPECT_LT(v, prev) << k;
    prev = v;
  }
}

TEST(Iou, InvalidBoxThrows) {
  EXPECT_THROW(iou({0, 0, 0, 5}, {0, 0, 1, 1}), DataError);
  EXPECT_THROW(iou({0, 0, 1, 1}, {3, 3, 2, 4}), DataError);
}

TEST(Match, Examples) {
  const BBox b{0, 0, 10, 10};
  EXPECT_EQ(match_detections({det("i", b, 0, 0.5)}, {gt("i", b, 0)}, 0.5).is_tp, std::vector<bool>{true});
  EXPECT_EQ(match_detections({det("i", b, 0, 0.5)}, {}, 0.5).is_tp, std::vector<bool>{false});
  // Same box in another image does not match.
  EXPECT_EQ(match_detections({det("j", b, 0, 0.5)}, {gt("i", b, 0)}, 0.5).is_tp, std::vector<bool>{false});
}

TEST(Match, HigherScoreWinsRegardlessOfInputOrder) {
  const BBox g{0, 0, 10, 10};
  const std::vector<Detection> dets{det("i", {0, 0, 10, 9}, 0, 0.4), det("i", {1, 0, 10, 10}, 0, 0.7)};
  const std::vector<GroundTruthBox> gts{gt("i", g, 0)};
  const auto r = match_detections(dets, gts, 0.5);
  EXPECT_EQ(r.is_tp, (std::vector<bool>{false, true}));
  // Every ordering of the input gives the same labels per detection.
  std::vector<std::size_t> perm{0, 1};
  do {
    std::vector<Detection> p{dets[perm[0]], dets[perm[1]]};
    const auto rp = match_detections(p, gts, 0.5);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(rp.is_tp[i], r.is_tp[perm[i]]);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST(Match, EqualScoresKeepInputOrder) {
  const BBox g{0, 0, 10, 10};
  const auto r = match_detections({det("i", g, 0, 0.5), det("i", g, 0, 0.5)}, {gt("i", g, 0)}, 0.5);
  EXPECT_EQ(r.is_tp, (std::vector<bool>{true, false}));
}

TEST(Match, AgreesWithBruteForceGreedy) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> nd(0, 5), ng(0, 4), img(0, 1), sc(0, 9);
  for (int t = 0; t < 300; ++t) {
    std::vector<Detection> dets;
    std::vector<GroundTruthBox> gts;
    for (int i = ng(rng); i-- > 0;) gts.push_back(gt(std::to_string(img(rng)), random_int_box(rng, 12), 0));
    for (int i = nd(rng); i-- > 0;) dets.push_back(det(std::to_string(img(rng)), random_int_box(rng, 12), 0, sc(rng) / 9.0));
    for (double thr : {0.0, 0.3, 0.5, 0.75}) {
      EXPECT_EQ(match_detections(dets, gts, thr).ranked_labels(), oracle::greedy_labels(dets, gts, thr));
    }
  }
}

TEST(Match, GreedyIsOptimalWhenIousWellSeparated) {
  // Ground truths far apart; each detection is either a tight jitter of one
  // ground truth (IoU > 0.7) or a loose one (IoU < 0.3), never in between.
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<int> n(1, 3), pick(0, 2), coin(0, 1), jit(0, 1);
  for (int t = 0; t < 200; ++t) {
    std::vector<GroundTruthBox> gts;
    const int n_gt = n(rng);
    for (int i = 0; i < n_gt; ++i) gts.push_back(gt("i", {100.0 * i, 0, 100.0 * i + 20, 20}, 0));
    std::vector<Detection> dets;
    for (int i = n(rng); i-- > 0;) {
      const auto& g = gts[std::size_t(pick(rng) % n_gt)].box;
      const BBox b = coin(rng) ? BBox{g.x1 + jit(rng), g.y1, g.x2, g.y2 - jit(rng)} : BBox{g.x1 + 12, g.y1 + 12, g.x2 + 12, g.y2 + 12};
      dets.push_back(det("i", b, 0, std::uniform_real_distribution<double>(0, 1)(rng)));
    }
    for (const auto& d : dets)
      for (const auto& g : gts) {
        const double v = iou(d.box, g.box);
        ASSERT_TRUE(v > 0.7 || v < 0.3);
      }
    EXPECT_EQ(match_detections(dets, gts, 0.5).ranked_labels(), oracle::best_assignment(dets, gts, 0.5));
  }
}

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision({true}, 1).value(), 1.0);
  EXPECT_EQ(average_precision({false, true}, 1).value(), 0.5);
  EXPECT_EQ(average_precision({true, true}, 4).value(), 0.5);
  EXPECT_EQ(average_precision({}, 3).value(), 0.0);
  EXPECT_EQ(average_precision({false, false}, 0).value(), 0.0);
  EXPECT_FALSE(average_precision({}, 0).has_value());
}

TEST(AveragePrecision, EnvelopeFillsDips) {
  // TP FP TP, n_gt 2: precision 1 at recall 0.5, 2/3 at recall 1.
  EXPECT_NEAR(average_precision({true, false, true}, 2).value(), 0.5 + 0.5 * 2.0 / 3.0, 1e-15);
  // FP TP FP TP, n_gt 2: envelope at the first TP is max(1/2, 2/4) = 1/2.
  EXPECT_NEAR(average_precision({false, true, false, true}, 2).value(), 0.5, 1e-15);
}

TEST(AveragePrecision, MatchesOracleAndBoundedByRecall) {
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<int> len(0, 12), bit(0, 1);
  for (int t = 0; t < 500; ++t) {
    std::vector<bool> labels(std::size_t(len(rng)));
    std::size_t tp = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) tp += (labels[i] = bit(rng));
    const std::size_t n_gt = tp + std::size_t(len(rng) % 4) + (tp == 0);
    const double ap = average_precision(labels, n_gt).value();
    EXPECT_NEAR(ap, oracle::ap(labels, n_gt), 1e-12);
    EXPECT_LE(ap, double(tp) / double(n_gt) + 1e-15);
  }
}

TEST(Evaluate, PerfectDetections) {
  std::vector<GroundTruthBox> gts{gt("a", {0, 0, 10, 10}, 0), gt("a", {20, 0, 30, 12}, 3), gt("b", {5, 5, 9, 9}, 0)};
  std::vector<Detection> dets;
  for (const auto& g : gts) dets.push_back(det(g.image_id, g.box, g.class_id, 1.0));
  const auto r = evaluate(dets, gts);
  EXPECT_EQ(r.ap, 1.0);
  EXPECT_EQ(r.ap50, 1.0);
  EXPECT_EQ(r.ap75, 1.0);
}

TEST(Evaluate, NoDetections) {
  const auto r = evaluate({}, {gt("a", {0, 0, 10, 10}, 0), gt("a", {0, 0, 4, 4}, 2)});
  EXPECT_EQ(r.ap, 0.0);
  EXPECT_EQ(r.ap50, 0.0);
  EXPECT_EQ(r.ap75, 0.0);
}

TEST(Evaluate, EmptyGroundTruthIsAnError) { EXPECT_THROW(evaluate({det("a", {0, 0, 1, 1}, 0, 1)}, {}), DataError); }

TEST(Evaluate, OnePerfectClassOneAllFalsePositive) {
  const auto r = evaluate({det("a", {0, 0, 10, 10}, 0, 0.9), det("a", {50, 50, 60, 60}, 1, 0.8)},
                          {gt("a", {0, 0, 10, 10}, 0), gt("a", {0, 0, 10, 10}, 1)});
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    EXPECT_EQ((r.per_class.at(0)[i] + r.per_class.at(1)[i]) / 2, 0.5);
  }
  EXPECT_EQ(r.ap, 0.5);
  EXPECT_EQ(r.ap50, 0.5);
  EXPECT_EQ(r.ap75, 0.5);
}

TEST(Evaluate, ClassWithDetectionsOnlyCountsAsZero) {
  const auto r = evaluate({det("a", {0, 0, 10, 10}, 0, 0.9), det("a", {0, 0, 10, 10}, 7, 0.9)}, {gt("a", {0, 0, 10, 10}, 0)});
  EXPECT_EQ(r.per_class.size(), 2u);
  EXPECT_EQ(r.ap50, 0.5);
}

TEST(Evaluate, ExtraThresholdsReported) {
  const auto r = evaluate({det("a", {0, 0, 10, 10}, 0, 0.9)}, {gt("a", {0, 0, 10, 10}, 0)}, {0.3, 0.5});
  EXPECT_EQ(r.thresholds.size(), 11u);
  EXPECT_EQ(r.class_ap(0, 0.3), 1.0);
  EXPECT_THROW(evaluate({}, {gt("a", {0, 0, 1, 1}, 0)}, {1.5}), DataError);
}

TEST(Evaluate, RandomSmallInstancesMatchOracle) {
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<int> ng(1, 3), nd(0, 3), img(0, 1), cls(0, 1), sc(0, 20);
  for (int t = 0; t < 60; ++t) {
    std::vector<GroundTruthBox> gts;
    std::vector<Detection> dets;
    for (int i = ng(rng); i-- > 0;) gts.push_back(gt(std::to_string(img(rng)), random_int_box(rng, 10), cls(rng)));
    // Detections near a ground truth so that hits at several thresholds occur.
    for (int i = nd(rng); i-- > 0;) {
      const auto& g = gts[std::size_t(std::uniform_int_distribution<std::size_t>(0, gts.size() - 1)(rng))];
      BBox b = g.box;
      b.x2 += std::uniform_int_distribution<int>(0, 3)(rng);
      b.y1 -= std::uniform_int_distribution<int>(0, 2)(rng);
      dets.push_back(det(g.image_id, b, cls(rng) ? g.class_id : 1 - g.class_id, sc(rng) / 20.0));
    }
    ASSERT_LE(gts.size() + dets.size(), 6u);
    const auto r = evaluate(dets, gts);
    const auto o = oracle::evaluate(dets, gts);
    EXPECT_NEAR(r.ap, o.ap, 1e-9) << t;
    EXPECT_NEAR(r.ap50, o.ap50, 1e-9) << t;
    EXPECT_NEAR(r.ap75, o.ap75, 1e-9) << t;
  }
}

TEST(Evaluate, InvariantUnderMonotoneScoreRescaling) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> cls(0, 2), sc(0, 10);
  for (int t = 0; t < 30; ++t) {
    std::vector<GroundTruthBox> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 5; ++i) gts.push_back(gt("a", random_int_box(rng, 20), cls(rng)));
    for (int i = 0; i < 8; ++i) dets.push_back(det("a", random_int_box(rng, 20), cls(rng), sc(rng) / 10.0));
    auto warped = dets;
    for (auto& d : warped) d.score = 0.05 + 0.9 * d.score * d.score;
    const auto a = evaluate(dets, gts), b = evaluate(warped, gts);
    EXPECT_EQ(a.ap, b.ap);
    EXPECT_EQ(a.per_class, b.per_class);
  }
}

TEST(Evaluate, DecomposesIntoPerClassPartitions) {
  std::mt19937_64 rng(18);
  for (int t = 0; t < 20; ++t) {
    std::vector<GroundTruthBox> gts;
    std::vector<Detection> dets;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2; ++i) gts.push_back(gt("a", random_int_box(rng, 16), c));
    for (int i = 0; i < 9; ++i) dets.push_back(det("a", random_int_box(rng, 16), i % 3, (i * 7 % 9) / 9.0));
    const auto all = evaluate(dets, gts);
    double ap = 0, ap50 = 0;
    for (int c = 0; c < 3; ++c) {
      std::vector<GroundTruthBox> cg;
      std::vector<Detection> cd;
      for (const auto& g : gts)
        if (g.class_id == c) cg.push_back(g);
      for (const auto& d : dets)
        if (d.class_id == c) cd.push_back(d);
      const auto part = evaluate(cd, cg);
      ap += part.ap / 3;
      ap50 += part.ap50 / 3;
    }
    EXPECT_NEAR(all.ap, ap, 1e-12);
    EXPECT_NEAR(all.ap50, ap50, 1e-12);
  }
}

TEST(Fixture, TwoClassReproducesCommittedValues) {
  const auto gts = gtsdb::to_ground_truth(gtsdb::load_gt(fixture("gt.txt")));
  const auto dets = parse_detections(gtsdb::read_text(fixture("dets.txt")));
  ASSERT_EQ(gts.size() + dets.size(), 6u);
  std::ifstream in(fixture("expected.json"));
  const auto expected = nlohmann::json::parse(in);
  const auto r = evaluate(dets, gts);
  EXPECT_EQ(r.ap, expected["AP"].get<double>());
  EXPECT_EQ(r.ap50, expected["AP50"].get<double>());
  EXPECT_EQ(r.ap75, expected["AP75"].get<double>());
  EXPECT_EQ(to_json(r)["per_class"], expected["per_class"]);
}

TEST(DetectionsFile, ParseAndRoundTrip) {
  const auto d = parse_detections("img1;1.5;2;10;12.25;3;0.75\n\nimg2;0;0;1;1;0;1\n");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].image_id, "img1");
  EXPECT_EQ(d[0].box, (BBox{1.5, 2, 10, 12.25}));
  EXPECT_EQ(d[0].class_id, 3);
  EXPECT_EQ(d[0].score, 0.75);
  const auto again = parse_detections(serialize_detections(d));
  ASSERT_EQ(again.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(again[i].box, d[i].box);
    EXPECT_EQ(again[i].score, d[i].score);
  }
}

TEST(DetectionsFile, ErrorsCarryLineNumbers) {
  auto message = [](const std::string& text) {
    try {
      parse_detections(text);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("a;0;0;1;1;0;0.5\na;0;0;1;1;0\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("a;0;0;x;1;0;0.5\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("a;0;0;1;1;0;0.5\n\na;5;0;1;1;0;0.5").find("line 3"), std::string::npos);
  EXPECT_NE(message("a;0;0;1;1;0;1.5").find("score"), std::string::npos);
}

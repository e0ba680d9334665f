#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "evit/detect_eval.hpp"
#include "evit/gtsdb.hpp"

using namespace evit;
using namespace evit::gtsdb;
namespace fs = std::filesystem;

namespace {

std::string ppm_bytes(const std::string& header, std::initializer_list<int> pixels) {
  std::string s = header;
  for (int p : pixels) s.push_back(static_cast<char>(static_cast<unsigned char>(p)));
  return s;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "evit_test_gtsdb";
  fs::create_directories(dir);
  return dir / name;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ParseGt, OfficialLineFormat) {
  const auto r = parse_gt("00000.ppm;774;411;815;446;11");
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], (GtRecord{"00000.ppm", 774, 411, 815, 446, 11}));
  EXPECT_EQ(r[0].box(), (eval::BBox{774, 411, 815, 446}));
}

TEST(ParseGt, EmptyAndBlankLines) {
  EXPECT_TRUE(parse_gt("").empty());
  EXPECT_EQ(parse_gt("\n\na.ppm;1;1;2;2;0\r\n\n").size(), 1u);
}

TEST(ParseGt, Errors) {
  EXPECT_THROW(parse_gt("a.ppm;10;10;5;20;0"), DataError);
  EXPECT_THROW(parse_gt("a.ppm;10;10;20;10;0"), DataError);
  EXPECT_THROW(parse_gt("a.ppm;1;1;2;2;43"), DataError);
  EXPECT_THROW(parse_gt("a.ppm;1;1;2;2;-1"), DataError);
  EXPECT_THROW(parse_gt("a.ppm;1;1;2;2"), DataError);
  EXPECT_THROW(parse_gt("a.ppm;1;1;2.5;2;0"), DataError);
  const auto msg = error_of([] { parse_gt("a.ppm;1;1;2;2;0\nb.ppm;1;x;2;2;0\n"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(ParseGt, SerializeRoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> c(0, 1300), cls(0, 42), len(1, 80), img(0, 899);
  std::vector<GtRecord> recs;
  for (int i = 0; i < 200; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%05d.ppm", img(rng));
    const int l = c(rng), t = c(rng);
    recs.push_back({name, l, t, l + len(rng), t + len(rng), cls(rng)});
  }
  EXPECT_EQ(parse_gt(serialize_gt(recs)), recs);
  EXPECT_EQ(serialize_gt(parse_gt(serialize_gt(recs))), serialize_gt(recs));
}

TEST(LoadGt, MissingFileNamesPath) {
  const auto msg = error_of([] { load_gt("/nonexistent/gt.txt"); });
  EXPECT_NE(msg.find("/nonexistent/gt.txt"), std::string::npos);
}

TEST(Ppm, SingleWhitePixel) {
  const auto t = decode_ppm<double>(ppm_bytes("P6\n1 1\n255\n", {255, 255, 255}));
  EXPECT_EQ(t.shape(), (Shape{3, 1, 1}));
  for (double v : t.data()) EXPECT_EQ(v, 1.0);
}

TEST(Ppm, RedThenBlue) {
  const auto t = decode_ppm<float>(ppm_bytes("P6 2 1 255\n", {255, 0, 0, 0, 0, 255}));
  EXPECT_EQ(t.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(t.at({0, 0, 0}), 1.0f);
  EXPECT_EQ(t.at({0, 0, 1}), 0.0f);
  EXPECT_EQ(t.at({1, 0, 0}), 0.0f);
  EXPECT_EQ(t.at({1, 0, 1}), 0.0f);
  EXPECT_EQ(t.at({2, 0, 0}), 0.0f);
  EXPECT_EQ(t.at({2, 0, 1}), 1.0f);
}

TEST(Ppm, HeaderComments) {
  const auto t = decode_ppm<double>(ppm_bytes("P6\n# made by hand\n1 1\n# max\n255\n", {0, 51, 255}));
  EXPECT_EQ(t[1], 51.0 / 255.0);
}

TEST(Ppm, GradientRoundTripIsBitExact) {
  Tensor<float> img(Shape{3, 8, 8});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) img.at({c, y, x}) = float(c * 64 + y * 8 + x) / 255.0f;
  const auto path = scratch("grad.ppm").string();
  save_ppm(img, path);
  const auto back = load_ppm<float>(path);
  EXPECT_EQ(back, img);
  // Values are exactly k / 255 for the stored byte k.
  const std::string raw = read_text(path);
  const std::size_t off = raw.size() - 3 * 64;
  for (std::size_t i = 0; i < 64; ++i)
    EXPECT_EQ(back[i], float(static_cast<unsigned char>(raw[off + 3 * i])) / 255.0f);
}

TEST(Ppm, Errors) {
  EXPECT_THROW(decode_ppm<float>(ppm_bytes("P3\n1 1\n255\n", {1, 2, 3})), DataError);
  EXPECT_THROW(decode_ppm<float>(ppm_bytes("P5\n1 1\n255\n", {1})), DataError);
  const auto msg = error_of([] { decode_ppm<float>(ppm_bytes("P6\n2 2\n255\n", {1, 2, 3, 4, 5})); });
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_THROW(decode_ppm<float>("P6\n2"), DataError);
  EXPECT_THROW(decode_ppm<float>(ppm_bytes("P6\n1 1\n65535\n", {0, 0, 0, 0, 0, 0})), DataError);
  EXPECT_THROW(load_ppm<float>("/nonexistent.ppm"), DataError);
}

TEST(SplitStats, EmptyList) {
  const auto s = split_stats({}, Split::all);
  EXPECT_EQ(s.n_images_with_signs, 0u);
  EXPECT_EQ(s.n_signs, 0u);
  for (auto v : s.per_class) EXPECT_EQ(v, 0u);
}

TEST(SplitStats, ThreeRecordsTwoFiles) {
  const auto recs = parse_gt("00001.ppm;1;1;5;5;3\n00001.ppm;10;10;20;20;3\n00700.ppm;1;1;5;5;40\n");
  const auto s = split_stats(recs, Split::all);
  EXPECT_EQ(s.n_images_with_signs, 2u);
  EXPECT_EQ(s.n_signs, 3u);
  EXPECT_EQ(s.per_class[3], 2u);
  EXPECT_EQ(s.per_class[40], 1u);
  EXPECT_EQ(split_stats(recs, Split::train).n_signs, 2u);
  EXPECT_EQ(split_stats(recs, Split::test).n_images_with_signs, 1u);
  EXPECT_EQ(to_json(s)["n_signs"], 3);
}

TEST(SplitStats, TrainPlusTestEqualsAll) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> img(0, 899), cls(0, 42);
  std::vector<GtRecord> recs;
  for (int i = 0; i < 300; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%05d.ppm", img(rng));
    recs.push_back({name, 0, 0, 10, 10, cls(rng)});
  }
  // Default rule, then an arbitrary manifest that partitions the same files.
  SplitManifest m;
  for (const auto& r : recs) (std::hash<std::string>{}(r.filename) % 3 ? m.train : m.test).insert(r.filename);
  for (const std::optional<SplitManifest>& man : {std::optional<SplitManifest>{}, std::optional<SplitManifest>{m}}) {
    const auto tr = split_stats(recs, Split::train, man), te = split_stats(recs, Split::test, man),
               all = split_stats(recs, Split::all, man);
    EXPECT_EQ(tr.n_signs + te.n_signs, all.n_signs);
    EXPECT_EQ(tr.n_images_with_signs + te.n_images_with_signs, all.n_images_with_signs);
    for (int c = 0; c < kNumClasses; ++c) EXPECT_EQ(tr.per_class[c] + te.per_class[c], all.per_class[c]);
  }
}

TEST(SplitManifest, ParseAndErrors) {
  const auto m = SplitManifest::parse("[train]\n00001.ppm\n00002.ppm\n\n[test]\n00700.ppm\n");
  EXPECT_EQ(m.train.size(), 2u);
  EXPECT_EQ(m.test.size(), 1u);
  EXPECT_TRUE(in_split("00700.ppm", Split::test, m));
  EXPECT_FALSE(in_split("00003.ppm", Split::train, m));
  EXPECT_THROW(SplitManifest::parse("00001.ppm\n"), DataError);
  EXPECT_THROW(SplitManifest::parse("[train]\na\n[test]\na\n"), DataError);
  EXPECT_THROW(in_split("abc.ppm", Split::train, std::nullopt), DataError);
  EXPECT_THROW(parse_split("val"), ConfigError);
}

TEST(Superclass, DefaultTableLookup) {
  const auto m = SuperclassMap::gtsdb_default();
  EXPECT_EQ(superclass_of(11, m), Superclass::danger);
  EXPECT_EQ(superclass_of(14, m), Superclass::other);
  EXPECT_EQ(superclass_of(38, m), Superclass::mandatory);
  EXPECT_EQ(superclass_of(2, m), Superclass::prohibitory);
  EXPECT_THROW(superclass_of(43, m), DataError);
  EXPECT_THROW(superclass_of(-1, m), DataError);
}

TEST(Superclass, ShippedFileEqualsBuiltInDefault) {
  const auto m = SuperclassMap::load(std::string(EVIT_TEST_DATA) + "/../../data/superclasses.json");
  EXPECT_EQ(m.to_json(), SuperclassMap::gtsdb_default().to_json());
}

TEST(Superclass, TotalityEnforcedAtLoad) {
  auto j = SuperclassMap::gtsdb_default().to_json();
  EXPECT_NO_THROW(SuperclassMap::from_json(j));
  auto missing = j;
  missing.erase("17");
  const auto msg = error_of([&] { SuperclassMap::from_json(missing); });
  EXPECT_NE(msg.find("17"), std::string::npos) << msg;
  auto extra = j;
  extra["43"] = "other";
  EXPECT_THROW(SuperclassMap::from_json(extra), ConfigError);
  auto bad = j;
  bad["3"] = "warning";
  EXPECT_THROW(SuperclassMap::from_json(bad), ConfigError);
  j["_note"] = "comments are ignored";
  EXPECT_NO_THROW(SuperclassMap::from_json(j));
}

TEST(Superclass, AnyAssignmentIsLookedUp) {
  std::mt19937_64 rng(5);
  std::array<Superclass, kNumClasses> t{};
  for (auto& s : t) s = Superclass(std::uniform_int_distribution<int>(0, 3)(rng));
  const SuperclassMap m(t);
  const auto back = SuperclassMap::from_json(m.to_json());
  for (int c = 0; c < kNumClasses; ++c) {
    EXPECT_EQ(m(c), t[std::size_t(c)]);
    EXPECT_EQ(back(c), t[std::size_t(c)]);
  }
}

TEST(Superclass, RelabelCommutesWithEvaluation) {
  // Four fine classes sent to four distinct superclasses: relabeling both
  // sides only renames classes, so per-class APs carry over unchanged.
  const int fine[4] = {11, 2, 35, 41};
  const auto m = SuperclassMap::gtsdb_default();
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> pick(0, 3), pos(0, 30), sc(0, 10);
  for (int t = 0; t < 20; ++t) {
    std::vector<eval::GroundTruthBox> gts;
    std::vector<eval::Detection> dets;
    for (int i = 0; i < 6; ++i) {
      const double x = pos(rng), y = pos(rng);
      gts.push_back({"a", {x, y, x + 8, y + 8}, fine[pick(rng)]});
      dets.push_back({"a", {x + pos(rng) % 4, y, x + 8, y + 8}, fine[pick(rng)], sc(rng) / 10.0});
    }
    const auto fine_rep = eval::evaluate(dets, gts);
    const auto coarse_rep = eval::evaluate(relabel(dets, m), relabel(gts, m));
    EXPECT_EQ(fine_rep.ap, coarse_rep.ap);
    for (const auto& [cls, row] : fine_rep.per_class) EXPECT_EQ(coarse_rep.per_class.at(int(m(cls))), row);
    // Relabeling is elementwise, so it commutes with concatenation.
    auto both = dets;
    both.insert(both.end(), dets.begin(), dets.end());
    const auto rb = relabel(both, m), rd = relabel(dets, m);
    for (std::size_t i = 0; i < dets.size(); ++i) EXPECT_EQ(rb[i + dets.size()].class_id, rd[i].class_id);
  }
}

// Runs only when the official annotation file is provided.
TEST(OfficialGtsdb, AnnotationCount) {
  const char* path = std::getenv("GTSDB_GT");
  if (!path || !fs::exists(path)) GTEST_SKIP() << "set GTSDB_GT to the official gt.txt to run";
  const auto recs = load_gt(path);
  EXPECT_EQ(recs.size(), kReferenceSigns);
  EXPECT_EQ(split_stats(recs, Split::all).n_signs, kReferenceSigns);
}

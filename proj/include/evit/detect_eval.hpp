#pragma once

// IoU, greedy score-ordered matching, all-points interpolated AP and
// COCO-style mAP over IoU thresholds.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "evit/errors.hpp"

namespace evit::eval {

struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  bool valid() const { return x2 > x1 && y2 > y1 && std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2); }
  double area() const { return (x2 - x1) * (y2 - y1); }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Detection {
  std::string image_id;
  BBox box;
  int class_id = 0;
  double score = 0;
};

struct GroundTruthBox {
  std::string image_id;
  BBox box;
  int class_id = 0;
};

inline void require_valid(const BBox& b) {
  if (!b.valid()) {
    std::ostringstream os;
    os << "invalid box (" << b.x1 << "," << b.y1 << "," << b.x2 << "," << b.y2 << "): needs x2 > x1 and y2 > y1";
    throw DataError(os.str());
  }
}

/// Intersection over union of two continuous-coordinate boxes.
inline double iou(const BBox& a, const BBox& b) {
  require_valid(a);
  require_valid(b);
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

struct MatchResult {
  std::vector<bool> is_tp;        // per detection, input order
  std::vector<std::size_t> rank;  // detection indices by descending score (stable)

  /// TP flags in descending-score order, as consumed by average_precision.
  std::vector<bool> ranked_labels() const {
    std::vector<bool> out;
    out.reserve(rank.size());
    for (std::size_t i : rank) out.push_back(is_tp[i]);
    return out;
  }
};

/// Greedy matching of one class. Detections are visited by descending score
/// (ties keep input order); each takes the unmatched same-image ground truth
/// with the highest IoU (first in input order on ties) if that IoU >= thr.
inline MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                                    double iou_thr) {
  MatchResult r;
  r.is_tp.assign(dets.size(), false);
  r.rank.resize(dets.size());
  std::iota(r.rank.begin(), r.rank.end(), std::size_t{0});
  std::stable_sort(r.rank.begin(), r.rank.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::map<std::string, std::vector<std::size_t>> by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) by_image[gts[g].image_id].push_back(g);
  std::vector<bool> used(gts.size(), false);

  for (std::size_t di : r.rank) {
    auto it = by_image.find(dets[di].image_id);
    if (it == by_image.end()) continue;
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g : it->second) {
      if (used[g]) continue;
      const double v = iou(dets[di].box, gts[g].box);
      if (v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best >= iou_thr && best >= 0) {
      used[best_g] = true;
      r.is_tp[di] = true;
    }
  }
  return r;
}

/// Area under the monotone precision envelope of a ranked TP/FP list.
///
/// Returns nullopt when there is nothing to score (no ground truths and no
/// detections); with no ground truths but some detections the AP is 0.
inline std::optional<double> average_precision(const std::vector<bool>& ranked, std::size_t n_gt) {
  if (n_gt == 0) return ranked.empty() ? std::nullopt : std::optional<double>(0.0);
  const std::size_t n = ranked.size();
  std::vector<double> prec(n), rec(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += ranked[i] ? 1 : 0;
    prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rec[i] > prev_r) {
      ap += (rec[i] - prev_r) * prec[i];
      prev_r = rec[i];
    }
  }
  return ap;
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

struct EvalReport {
  std::vector<double> thresholds;                // sorted, includes the COCO grid
  std::map<int, std::vector<double>> per_class;  // AP per threshold, aligned with `thresholds`
  double ap = 0, ap50 = 0, ap75 = 0;

  double class_ap(int cls, double thr) const {
    const auto& v = per_class.at(cls);
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (std::abs(thresholds[i] - thr) < 1e-9) return v[i];
    throw std::out_of_range("threshold not evaluated");
  }
};

/// Per-class APs at each threshold; AP50/AP75 average over classes, the
/// headline AP over classes and the COCO grid. Classes appearing in neither
/// detections nor ground truths do not exist here, so they never enter a mean.
inline EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                           const std::vector<double>& extra_thresholds = {}) {
  if (gts.empty()) throw DataError("evaluate: ground-truth set is empty");
  EvalReport rep;
  rep.thresholds = coco_thresholds();
  for (double t : extra_thresholds) {
    if (!(t >= 0 && t <= 1)) throw DataError("evaluate: IoU threshold outside [0, 1]");
    if (std::none_of(rep.thresholds.begin(), rep.thresholds.end(), [&](double u) { return std::abs(u - t) < 1e-9; }))
      rep.thresholds.push_back(t);
  }
  std::sort(rep.thresholds.begin(), rep.thresholds.end());

  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  for (const auto& d : dets) classes.insert(d.class_id);

  for (int cls : classes) {
    std::vector<Detection> cd;
    std::vector<GroundTruthBox> cg;
    for (const auto& d : dets)
      if (d.class_id == cls) cd.push_back(d);
    for (const auto& g : gts)
      if (g.class_id == cls) cg.push_back(g);
    auto& row = rep.per_class[cls];
    for (double t : rep.thresholds) {
      row.push_back(average_precision(match_detections(cd, cg, t).ranked_labels(), cg.size()).value_or(0.0));
    }
  }

  auto mean_at = [&](double thr) {
    double s = 0;
    for (const auto& [cls, row] : rep.per_class) s += rep.class_ap(cls, thr);
    return s / static_cast<double>(rep.per_class.size());
  };
  rep.ap50 = mean_at(0.5);
  rep.ap75 = mean_at(0.75);
  double s = 0;
  const auto grid = coco_thresholds();
  for (double t : grid) s += mean_at(t);
  rep.ap = s / static_cast<double>(grid.size());
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [cls, row] : r.per_class) {
    nlohmann::json c = nlohmann::json::object();
    for (std::size_t i = 0; i < row.size(); ++i) {
      char key[16];
      std::snprintf(key, sizeof key, "%.2f", r.thresholds[i]);
      c[key] = row[i];
    }
    per[std::to_string(cls)] = c;
  }
  return {{"AP", r.ap}, {"AP50", r.ap50}, {"AP75", r.ap75}, {"thresholds", r.thresholds}, {"per_class", per}};
}

// --- detections file: image_id;x1;y1;x2;y2;class_id;score -----------------

namespace detail {
inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = line.find(sep, start);
    out.emplace_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

inline double to_double(const std::string& s, std::size_t line, const char* what) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw DataError("line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
  return v;
}

inline long to_long(const std::string& s, std::size_t line, const char* what) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw DataError("line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
  return v;
}
}  // namespace detail

inline std::vector<Detection> parse_detections(std::string_view text) {
  std::vector<Detection> out;
  std::size_t lineno = 0, start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string_view line = detail::trim(text.substr(start, end - start));
    ++lineno;
    start = end + 1;
    if (line.empty()) continue;
    const auto f = detail::split(line, ';');
    if (f.size() != 7) {
      throw DataError("line " + std::to_string(lineno) + ": expected 7 ';'-separated fields, got " + std::to_string(f.size()));
    }
    Detection d;
    d.image_id = f[0];
    d.box = {detail::to_double(f[1], lineno, "x1"), detail::to_double(f[2], lineno, "y1"),
             detail::to_double(f[3], lineno, "x2"), detail::to_double(f[4], lineno, "y2")};
    d.class_id = static_cast<int>(detail::to_long(f[5], lineno, "class id"));
    d.score = detail::to_double(f[6], lineno, "score");
    if (!d.box.valid()) throw DataError("line " + std::to_string(lineno) + ": degenerate box");
    if (!(d.score >= 0 && d.score <= 1)) throw DataError("line " + std::to_string(lineno) + ": score outside [0, 1]");
    out.push_back(std::move(d));
  }
  return out;
}

inline std::string serialize_detections(const std::vector<Detection>& dets) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& d : dets) {
    os << d.image_id << ';' << d.box.x1 << ';' << d.box.y1 << ';' << d.box.x2 << ';' << d.box.y2 << ';' << d.class_id
       << ';' << d.score << '\n';
  }
  return os.str();
}

}  // namespace evit::eval

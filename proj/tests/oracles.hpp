#pragma once

// Reference implementations kept deliberately naive: loops in the most direct
// form, no shared code with the library beyond the data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "evit/detect_eval.hpp"
#include "evit/tensor.hpp"

using evit::Shape;
using evit::Tensor;

namespace oracle {

// Direct cross-correlation: one output element at a time, summing (ic, ky, kx)
// from zero, bias last.
inline Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, std::size_t stride,
                          std::size_t pad, std::size_t groups) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const std::size_t HO = (H + 2 * pad - KH) / stride + 1, WO = (W + 2 * pad - KW) / stride + 1;
  const std::size_t og = O / groups;
  (void)C;
  Tensor<double> y(Shape{N, O, HO, WO});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < HO; ++oy)
        for (std::size_t ox = 0; ox < WO; ++ox) {
          double acc = 0;
          for (std::size_t i = 0; i < cg; ++i)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = long(oy * stride + ky) - long(pad), ix = long(ox * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                acc += w.at({o, i, ky, kx}) * x.at({n, (o / og) * cg + i, std::size_t(iy), std::size_t(ix)});
              }
          if (b) acc += (*b)[o];
          y.at({n, o, oy, ox}) = acc;
        }
  return y;
}

inline Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t r = a.rank(), m = a.dim(r - 2), k = a.dim(r - 1), n = b.dim(r - 1);
  const std::size_t batch = a.numel() / (m * k);
  Shape os = a.shape();
  os[r - 1] = n;
  Tensor<double> c(os);
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t q = 0; q < k; ++q) acc += a[t * m * k + i * k + q] * b[t * k * n + q * n + j];
        c[t * m * n + i * n + j] = acc;
      }
  return c;
}

}  // namespace oracle

namespace oracle {

using evit::eval::BBox;
using evit::eval::Detection;
using evit::eval::GroundTruthBox;

inline double box_iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
}

/// Processing order: selection by highest score, lowest index on ties.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order;
  std::vector<bool> taken(dets.size(), false);
  for (std::size_t round = 0; round < dets.size(); ++round) {
    std::size_t best = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (!taken[i] && (best == dets.size() || dets[i].score > dets[best].score)) best = i;
    taken[best] = true;
    order.push_back(best);
  }
  return order;
}

/// TP/FP flags in processing order for one class.
inline std::vector<bool> greedy_labels(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                                       double thr) {
  std::vector<bool> used(gts.size(), false), out;
  for (std::size_t d : score_order(dets)) {
    int best = -1;
    double best_iou = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].image_id != dets[d].image_id) continue;
      const double v = box_iou(dets[d].box, gts[g].box);
      if (best < 0 || v > best_iou) best = int(g), best_iou = v;
    }
    const bool tp = best >= 0 && best_iou >= thr;
    if (tp) used[std::size_t(best)] = true;
    out.push_back(tp);
  }
  return out;
}

/// Each true positive adds 1/n_gt of recall at the best precision reachable
/// from its rank onwards.
inline double ap(const std::vector<bool>& labels, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> prec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    tp += labels[i];
    prec.push_back(double(tp) / double(i + 1));
  }
  double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    double best = 0;
    for (std::size_t j = i; j < labels.size(); ++j) best = std::max(best, prec[j]);
    total += best;
  }
  return total / double(n_gt);
}

struct Headline {
  double ap = 0, ap50 = 0, ap75 = 0;
};

inline Headline evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts) {
  std::set<int> classes;
  for (const auto& d : dets) classes.insert(d.class_id);
  for (const auto& g : gts) classes.insert(g.class_id);
  Headline h;
  for (int i = 0; i < 10; ++i) {
    const double thr = (50 + 5 * i) / 100.0;
    double mean = 0;
    for (int c : classes) {
      std::vector<Detection> cd;
      std::vector<GroundTruthBox> cg;
      for (const auto& d : dets)
        if (d.class_id == c) cd.push_back(d);
      for (const auto& g : gts)
        if (g.class_id == c) cg.push_back(g);
      mean += ap(greedy_labels(cd, cg, thr), cg.size());
    }
    mean /= double(classes.size());
    h.ap += mean / 10;
    if (i == 0) h.ap50 = mean;
    if (i == 5) h.ap75 = mean;
  }
  return h;
}

/// Exhaustive search over all one-to-one det->gt assignments with IoU >= thr,
/// preferring true positives at higher-ranked detections. Returns flags in
/// processing order.
inline std::vector<bool> best_assignment(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                                         double thr) {
  const auto order = score_order(dets);
  std::vector<bool> best(order.size(), false), cur(order.size(), false);
  std::vector<bool> used(gts.size(), false);
  std::function<void(std::size_t)> rec = [&](std::size_t k) {
    if (k == order.size()) {
      if (std::lexicographical_compare(best.begin(), best.end(), cur.begin(), cur.end())) best = cur;
      return;
    }
    const auto& d = dets[order[k]];
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].image_id != d.image_id || box_iou(d.box, gts[g].box) < thr) continue;
      used[g] = true;
      cur[k] = true;
      rec(k + 1);
      used[g] = false;
      cur[k] = false;
    }
    rec(k + 1);
  };
  rec(0);
  return best;
}

}  // namespace oracle

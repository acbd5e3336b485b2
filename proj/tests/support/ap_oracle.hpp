#pragma once

// Exhaustive-assignment AP/AR oracle and random rectangle scenes.

#include <algorithm>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "cropsim/traits.hpp"

namespace cropsim::testing {

inline Instance rect_instance(int h, int w, int x0, int y0, int x1, int y1, int label = 0, double score = 1.0) {
  Instance inst;
  inst.mask.assign(static_cast<size_t>(h * w), 0);
  for (int y = std::max(0, y0); y < std::min(h, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(w, x1); ++x) inst.mask[static_cast<size_t>(y * w + x)] = 1;
  inst.label = label;
  inst.score = score;
  update_bbox(inst, w);
  return inst;
}

// Exhaustive matcher: among all one-to-one assignments with IoU >= thr, the
// largest, preferring true positives on higher-scoring detections.
inline std::vector<uint8_t> brute_force_tp(const std::vector<const Instance*>& dts, const std::vector<const Instance*>& gts,
                                    double thr, IouType type) {
  std::vector<uint8_t> best(dts.size(), 0), cur(dts.size(), 0);
  std::vector<uint8_t> used(gts.size(), 0);
  auto better = [&](const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    const auto ca = std::count(a.begin(), a.end(), 1), cb = std::count(b.begin(), b.end(), 1);
    if (ca != cb) return ca > cb;
    return a > b;  // detections are in descending score order
  };
  std::function<void(size_t)> rec = [&](size_t d) {
    if (d == dts.size()) {
      if (better(cur, best)) best = cur;
      return;
    }
    cur[d] = 0;
    rec(d + 1);
    for (size_t g = 0; g < gts.size(); ++g) {
      const double iou = type == IouType::kMask ? mask_iou(*dts[d], *gts[g]) : box_iou(*dts[d], *gts[g]);
      if (used[g] || iou < thr) continue;
      used[g] = 1;
      cur[d] = 1;
      rec(d + 1);
      cur[d] = 0;
      used[g] = 0;
    }
  };
  rec(0);
  return best;
}

inline ApAr brute_force_ap_ar(const std::vector<InstanceMasks>& pred, const std::vector<InstanceMasks>& truth, IouType type) {
  std::vector<int> labels;
  for (const auto& t : truth)
    for (const auto& g : t.instances)
      if (std::find(labels.begin(), labels.end(), g.label) == labels.end()) labels.push_back(g.label);
  std::sort(labels.begin(), labels.end());
  ApAr out;
  for (int label : labels) {
    for (int ti = 0; ti < 10; ++ti) {
      const double thr = 0.5 + 0.05 * ti;
      std::vector<std::pair<double, int>> scored;  // (score, tp)
      int npos = 0;
      for (size_t im = 0; im < truth.size(); ++im) {
        std::vector<const Instance*> dts, gts;
        for (const auto& g : truth[im].instances)
          if (g.label == label) gts.push_back(&g);
        for (const auto& d : pred[im].instances)
          if (d.label == label) dts.push_back(&d);
        std::sort(dts.begin(), dts.end(), [](const Instance* a, const Instance* b) { return a->score > b->score; });
        npos += static_cast<int>(gts.size());
        auto tp = brute_force_tp(dts, gts, thr, type);
        for (size_t k = 0; k < dts.size(); ++k) scored.push_back({dts[k]->score, tp[k]});
      }
      std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      std::vector<double> rec, prec;
      int tp = 0;
      for (size_t k = 0; k < scored.size(); ++k) {
        tp += scored[k].second;
        rec.push_back(static_cast<double>(tp) / npos);
        prec.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
      }
      double ap = 0;
      for (int r = 0; r <= 100; ++r) {
        double p = 0;
        for (size_t k = 0; k < rec.size(); ++k)
          if (rec[k] >= r / 100.0) p = std::max(p, prec[k]);
        ap += p;
      }
      ap /= 101;
      out.ap += ap;
      out.ar += rec.empty() ? 0.0 : rec.back();
      if (ti == 0) out.ap50 += ap;
      if (ti == 5) out.ap75 += ap;
    }
  }
  const double nl = static_cast<double>(labels.size());
  out.ap /= nl * 10;
  out.ar /= nl * 10;
  out.ap50 /= nl;
  out.ap75 /= nl;
  return out;
}

/// One to two images, each with three disjoint ground-truth rectangles; detections
/// copy them with one possibly shifted, some missed and an optional false positive.
inline std::pair<std::vector<InstanceMasks>, std::vector<InstanceMasks>> random_scene(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pos(0, 7), size(5, 9), shift(-5, 5), coin(0, 1), extra(0, 3);
  std::uniform_real_distribution<double> score(0.05, 1.0);
  const int h = 40, w = 40;
  std::vector<InstanceMasks> truth, pred;
  const int n_images = 1 + coin(rng);
  for (int im = 0; im < n_images; ++im) {
    InstanceMasks t{h, w, {}}, p{h, w, {}};
    // three disjoint cells of a 3-column layout
    for (int k = 0; k < 3; ++k) {
      const int x0 = 13 * k + pos(rng) % 4, y0 = pos(rng) * 3;
      const int label = coin(rng);
      t.instances.push_back(rect_instance(h, w, x0, y0, x0 + size(rng), y0 + size(rng), label));
    }
    const int moved = extra(rng) % 3;
    for (int k = 0; k < 3; ++k) {
      Instance d = t.instances[static_cast<size_t>(k)];
      const auto& b = d.bbox;
      const int dx = k == moved ? shift(rng) : 0, dy = k == moved ? shift(rng) : 0;
      d = rect_instance(h, w, b[0] + dx, b[1] + dy, b[2] + dx, b[3] + dy, d.label, score(rng));
      if (extra(rng) == 0) continue;  // missed detection
      p.instances.push_back(d);
    }
    if (extra(rng) == 0) {
      const int x0 = pos(rng) * 4, y0 = pos(rng) * 4;
      p.instances.push_back(rect_instance(h, w, x0, y0, x0 + 6, y0 + 6, coin(rng), score(rng)));
    }
    truth.push_back(t);
    pred.push_back(p);
  }
  return {pred, truth};
}

}  // namespace cropsim::testing

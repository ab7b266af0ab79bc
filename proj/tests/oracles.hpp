// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations used by the unit and acceptance
// tests. Boxes live on a quarter-pixel lattice so that areas are exact
// integers in lattice units.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "homdet/boxgeom.hpp"
#include "homdet/rng.hpp"
#include "homdet/tensor.hpp"

namespace oracle {

using homdet::Annotation;
using homdet::BBox;
using homdet::Detection;

constexpr int kLattice = 4;  // cells per pixel

struct LBox {
  int x0, y0, x1, y1;  // lattice coordinates, x0 < x1, y0 < y1
};

inline LBox to_lattice(const BBox& b) {
  return {static_cast<int>(std::lround(b.x_min * kLattice)), static_cast<int>(std::lround(b.y_min * kLattice)),
          static_cast<int>(std::lround(b.x_max * kLattice)), static_cast<int>(std::lround(b.y_max * kLattice))};
}

inline BBox random_lattice_box(homdet::Rng& rng, int extent_px) {
  const int span = extent_px * kLattice;
  const int x0 = rng.uniform_int(0, span - 2), y0 = rng.uniform_int(0, span - 2);
  const int x1 = rng.uniform_int(x0 + 1, std::min(span, x0 + span / 2 + 1));
  const int y1 = rng.uniform_int(y0 + 1, std::min(span, y0 + span / 2 + 1));
  return {x0 / double(kLattice), y0 / double(kLattice), x1 / double(kLattice), y1 / double(kLattice)};
}

/// Intersection and union by counting lattice cells one by one.
inline std::pair<long, long> cell_counts(const BBox& a, const BBox& b) {
  const LBox la = to_lattice(a), lb = to_lattice(b);
  const int x_lo = std::min(la.x0, lb.x0), x_hi = std::max(la.x1, lb.x1);
  const int y_lo = std::min(la.y0, lb.y0), y_hi = std::max(la.y1, lb.y1);
  long inter = 0, uni = 0;
  for (int y = y_lo; y < y_hi; ++y)
    for (int x = x_lo; x < x_hi; ++x) {
      const bool ia = x >= la.x0 && x < la.x1 && y >= la.y0 && y < la.y1;
      const bool ib = x >= lb.x0 && x < lb.x1 && y >= lb.y0 && y < lb.y1;
      inter += ia && ib;
      uni += ia || ib;
    }
  return {inter, uni};
}

inline double iou(const BBox& a, const BBox& b) {
  const auto [i, u] = cell_counts(a, b);
  return static_cast<double>(i) / static_cast<double>(u);
}

/// Exact comparison iou(a, b) > t for a threshold given as num/den.
inline bool iou_greater(const BBox& a, const BBox& b, long num, long den) {
  const auto [i, u] = cell_counts(a, b);
  return i * den > num * u;
}

/// Stable order by descending score, written as selection sort.
inline std::vector<std::size_t> by_score(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order;
  std::vector<bool> used(dets.size(), false);
  for (std::size_t k = 0; k < dets.size(); ++k) {
    std::size_t best = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (!used[i] && (best == dets.size() || dets[i].score > dets[best].score)) best = i;
    used[best] = true;
    order.push_back(best);
  }
  return order;
}

/// Repeatedly takes the best remaining detection and deletes everything of
/// its class overlapping it by more than num/den.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, long num, long den) {
  std::vector<Detection> remaining;
  for (std::size_t i : by_score(dets)) remaining.push_back(dets[i]);
  std::vector<Detection> kept;
  while (!remaining.empty()) {
    const Detection top = remaining.front();
    kept.push_back(top);
    std::vector<Detection> next;
    for (std::size_t i = 1; i < remaining.size(); ++i)
      if (!(remaining[i].class_id == top.class_id && iou_greater(top.box, remaining[i].box, num, den)))
        next.push_back(remaining[i]);
    remaining = std::move(next);
  }
  return kept;
}

/// Greedy matching with exact rational IoU comparisons. IoU >= num/den
/// qualifies; among the best, the lowest ground-truth index wins.
inline std::vector<bool> match(const std::vector<Detection>& dets, const std::vector<Annotation>& gts, long num,
                               long den) {
  std::vector<bool> tp(dets.size(), false), taken(gts.size(), false);
  for (std::size_t d : by_score(dets)) {
    long best_i = -1, best_u = 1;
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != dets[d].class_id) continue;
      const auto [i, u] = cell_counts(dets[d].box, gts[g].box);
      if (i * den < num * u) continue;
      if (arg < 0 || i * best_u > best_i * u) {
        best_i = i;
        best_u = u;
        arg = static_cast<int>(g);
      }
    }
    if (arg >= 0) {
      taken[arg] = true;
      tp[d] = true;
    }
  }
  return tp;
}

/// AP as (1 / G) Σ over TP prefixes k of max_{j >= k} precision(j).
inline double average_precision(const std::vector<bool>& flags, long num_gt) {
  if (num_gt == 0) return 0.0;
  const std::size_t n = flags.size();
  double ap = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!flags[k]) continue;
    double best = 0;
    for (std::size_t j = k; j < n; ++j) {
      long tp = 0;
      for (std::size_t i = 0; i <= j; ++i) tp += flags[i];
      best = std::max(best, static_cast<double>(tp) / static_cast<double>(j + 1));
    }
    ap += best;
  }
  return ap / static_cast<double>(num_gt);
}

/// Pools per-image matches per class and enumerates the PR prefixes.
inline std::vector<double> per_class_ap(const std::vector<std::vector<Detection>>& dets,
                                        const std::vector<std::vector<Annotation>>& gts, long num, long den) {
  std::vector<double> out;
  for (int c = 0; c < homdet::kNumClasses; ++c) {
    std::vector<Detection> pooled;
    std::vector<bool> pooled_tp;
    long g = 0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const auto tp = match(dets[i], gts[i], num, den);
      for (std::size_t j = 0; j < dets[i].size(); ++j)
        if (dets[i][j].class_id == c) {
          pooled.push_back(dets[i][j]);
          pooled_tp.push_back(tp[j]);
        }
      for (const auto& a : gts[i]) g += a.class_id == c;
    }
    std::vector<bool> flags;
    for (std::size_t k : by_score(pooled)) flags.push_back(pooled_tp[k]);
    out.push_back(average_precision(flags, g));
  }
  return out;
}

/// Central finite difference of f at x along coordinate i.
inline double central_difference(const std::function<double(const homdet::Tensor&)>& f, homdet::Tensor x,
                                 std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2 * h);
}

inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace oracle

// SPDX-License-Identifier: Apache-2.0
// Finite-difference checks of the loss gradients, shared by the unit tests
// and the acceptance harness.
#pragma once

#include <cmath>
#include <vector>

#include "homdet/autograd.hpp"
#include "homdet/losses.hpp"
#include "homdet/rng.hpp"
#include "oracles.hpp"

namespace gradcheck {

using homdet::Rng;
using homdet::Tensor;

struct Stats {
  int points = 0;
  double max_rel_error = 0;
  void add(double analytic, double numeric) {
    ++points;
    max_rel_error = std::max(max_rel_error, oracle::relative_error(analytic, numeric));
  }
};

constexpr double kStep = 1e-6;

inline Stats focal(int points, std::uint64_t seed) {
  Rng rng(seed);
  Stats s;
  homdet::FocalParams params;
  while (s.points < points) {
    const int n = 6;
    Tensor p({n});
    std::vector<int> t(n);
    for (int i = 0; i < n; ++i) {
      p[i] = rng.uniform(0.02, 0.98);
      t[i] = static_cast<int>(rng.below(3)) - 1;
    }
    params.gamma = rng.uniform() < 0.5 ? 2.0 : rng.uniform(0.0, 3.0);
    params.alpha = rng.uniform(0.1, 0.9);
    const auto lv = homdet::focal_loss(p.values(), t, params);
    auto f = [&](const Tensor& x) { return homdet::focal_loss(x.values(), t, params).value; };
    for (int i = 0; i < n && s.points < points; ++i)
      if (t[i] >= 0) s.add(lv.grad[i], oracle::central_difference(f, p, i, kStep));
  }
  return s;
}

inline Stats smooth_l1(int points, std::uint64_t seed) {
  Rng rng(seed);
  Stats s;
  while (s.points < points) {
    const int n = 5;
    const double beta = rng.uniform(0.2, 2.0);
    Tensor p({n}), t({n});
    for (int i = 0; i < n; ++i) {
      t[i] = rng.uniform(-2, 2);
      double d;
      do d = rng.uniform(-3, 3);
      while (std::abs(std::abs(d) - beta) < 1e-3);
      p[i] = t[i] + d;
    }
    const auto lv = homdet::smooth_l1(p.values(), t.values(), beta);
    auto f = [&](const Tensor& x) { return homdet::smooth_l1(x.values(), t.values(), beta).value; };
    for (int i = 0; i < n && s.points < points; ++i) s.add(lv.grad[i], oracle::central_difference(f, p, i, kStep));
  }
  return s;
}

inline Stats domain_ce(int points, std::uint64_t seed) {
  Rng rng(seed);
  Stats s;
  while (s.points < points) {
    const int rows = 3, d = 2 + static_cast<int>(rng.below(3));
    Tensor z({rows * d});
    std::vector<int> ids(rows);
    for (auto& v : z.values()) v = 3 * rng.normal();
    for (auto& id : ids) id = static_cast<int>(rng.below(d));
    const auto lv = homdet::domain_cross_entropy(z.values(), d, ids);
    auto f = [&](const Tensor& x) { return homdet::domain_cross_entropy(x.values(), d, ids).value; };
    for (int i = 0; i < rows * d && s.points < points; ++i)
      s.add(lv.grad[i], oracle::central_difference(f, z, i, kStep));
  }
  return s;
}

inline Stats perceptual(int points, std::uint64_t seed) {
  Rng rng(seed);
  Stats s;
  const homdet::PerceptualExtractor ex(4, {0, 1, 2}, seed);
  while (s.points < points) {
    Tensor x({1, 3, 8, 8}), xh({1, 3, 8, 8});
    for (auto& v : x.values()) v = rng.uniform();
    for (auto& v : xh.values()) v = rng.uniform();
    auto leaf = homdet::ad::leaf(xh, true);
    auto loss = homdet::ad::perceptual_loss(x, leaf, ex);
    homdet::ad::backward(loss);
    auto f = [&](const Tensor& y) { return homdet::perceptual_loss(x, y, ex); };
    for (int k = 0; k < 4 && s.points < points; ++k) {
      const std::size_t i = rng.below(xh.size());
      s.add(leaf->grad[i], oracle::central_difference(f, xh, i, kStep));
    }
  }
  return s;
}

/// Largest |g_reversed + strength * g_plain| over random inputs.
inline double grad_reverse_deviation(int trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    const double strength = rng.uniform(0.0, 3.0);
    Tensor x({2, 3}), w({2, 3});
    for (auto& v : x.values()) v = rng.normal();
    for (auto& v : w.values()) v = rng.normal();
    auto run = [&](bool reverse) {
      auto leaf = homdet::ad::leaf(x, true);
      auto mid = reverse ? homdet::ad::grad_reverse(leaf, strength) : leaf;
      auto loss = homdet::ad::scalar_fn(homdet::ad::sigmoid(mid), [&](const Tensor& v) {
        Tensor g(v.shape());
        double s = 0;
        for (std::size_t i = 0; i < v.size(); ++i) {
          s += w[i] * v[i] * v[i];
          g[i] = 2 * w[i] * v[i];
        }
        return std::pair{s, g};
      });
      homdet::ad::backward(loss);
      return leaf->grad;
    };
    const Tensor gr = run(true), gp = run(false);
    for (std::size_t i = 0; i < gr.size(); ++i) worst = std::max(worst, std::abs(gr[i] + strength * gp[i]));
  }
  return worst;
}

}  // namespace gradcheck

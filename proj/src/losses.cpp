// SPDX-License-Identifier: Apache-2.0
#include "homdet/losses.hpp"

#include <algorithm>
#include <cmath>

#include "homdet/error.hpp"
#include "homdet/rng.hpp"
#include "homdet/serialize.hpp"

namespace homdet {

void LossWeights::validate() const {
  if (!(lambda1 >= 0) || !(lambda2 >= 0) || !std::isfinite(lambda1) || !std::isfinite(lambda2))
    fail(ErrorKind::Config, "loss weights lambda1, lambda2 must be finite and >= 0");
}

void FocalParams::validate() const {
  if (!(alpha >= 0 && alpha <= 1)) fail(ErrorKind::Config, "focal alpha must lie in [0,1]");
  if (!(gamma >= 0) || !std::isfinite(gamma)) fail(ErrorKind::Config, "focal gamma must be >= 0");
}

LossValue smooth_l1(std::span<const double> pred, std::span<const double> target, double beta) {
  require(beta > 0, "smooth_l1: beta must be > 0");
  if (pred.size() != target.size())
    fail(ErrorKind::Contract, "smooth_l1: length mismatch (" + std::to_string(pred.size()) + " vs " +
                                  std::to_string(target.size()) + ")");
  LossValue out{0.0, std::vector<double>(pred.size(), 0.0)};
  if (pred.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    if (std::abs(d) < beta) {
      out.value += 0.5 * d * d / beta;
      out.grad[i] = d / beta * inv_n;
    } else {
      out.value += std::abs(d) - 0.5 * beta;
      out.grad[i] = (d > 0 ? 1.0 : -1.0) * inv_n;
    }
  }
  out.value *= inv_n;
  return out;
}

LossValue focal_loss(std::span<const double> probs, std::span<const int> targets,
                     const FocalParams& params) {
  require(probs.size() == targets.size(), "focal_loss: length mismatch");
  const double a = params.alpha, g = params.gamma;
  std::size_t positives = 0;
  for (int t : targets) positives += (t == 1);
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, positives));

  LossValue out{0.0, std::vector<double>(probs.size(), 0.0)};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int t = targets[i];
    if (t < 0) continue;
    require(t <= 1, "focal_loss: targets must be 0, 1 or -1");
    const double raw = probs[i];
    const double p = std::clamp(raw, kProbEpsilon, 1.0 - kProbEpsilon);
    const bool clamped = p != raw;
    // Written in terms of q = p_t, with dq/dp = ±1.
    const double q = t == 1 ? p : 1.0 - p;
    const double at = t == 1 ? a : 1.0 - a;
    const double one_minus = 1.0 - q;
    const double mod = std::pow(one_minus, g);
    const double logq = std::log(q);
    out.value += -at * mod * logq;
    if (!clamped) {
      // d/dq [-at (1-q)^g ln q] = at [g (1-q)^(g-1) ln q - (1-q)^g / q]
      const double dmod = g == 0.0 ? 0.0 : g * std::pow(one_minus, g - 1.0);
      const double dq = at * (dmod * logq - mod / q);
      out.grad[i] = (t == 1 ? dq : -dq) * norm;
    }
  }
  out.value *= norm;
  return out;
}

LossValue domain_cross_entropy(std::span<const double> logits, int num_domains,
                               std::span<const int> domain_ids) {
  require(num_domains > 0, "domain_cross_entropy: num_domains must be > 0");
  require(logits.size() == domain_ids.size() * static_cast<std::size_t>(num_domains),
          "domain_cross_entropy: logits size does not match rows x domains");
  LossValue out{0.0, std::vector<double>(logits.size(), 0.0)};
  if (domain_ids.empty()) return out;
  const double inv_rows = 1.0 / static_cast<double>(domain_ids.size());
  for (std::size_t r = 0; r < domain_ids.size(); ++r) {
    const int id = domain_ids[r];
    if (id < 0 || id >= num_domains)
      fail(ErrorKind::Contract, "domain_cross_entropy: domain id " + std::to_string(id) +
                                    " out of range for " + std::to_string(num_domains) + " domains");
    const double* row = logits.data() + r * num_domains;
    const double mx = *std::max_element(row, row + num_domains);
    double z = 0.0;
    for (int d = 0; d < num_domains; ++d) z += std::exp(row[d] - mx);
    const double log_z = mx + std::log(z);
    out.value += (log_z - row[id]) * inv_rows;
    for (int d = 0; d < num_domains; ++d) {
      const double p = std::exp(row[d] - log_z);
      out.grad[r * num_domains + d] = (p - (d == id ? 1.0 : 0.0)) * inv_rows;
    }
  }
  return out;
}

LossBreakdown total_loss(double l_bb, double l_inst, double l_percep, double l_ce, const LossWeights& w) {
  for (double v : {l_bb, l_inst, l_percep, l_ce})
    if (!std::isfinite(v)) throw DivergenceError(-1, "non-finite loss component");
  LossBreakdown b{l_bb, l_inst, l_percep, l_ce, 0.0};
  b.total = l_bb + l_inst + w.lambda1 * l_percep + w.lambda2 * l_ce;
  return b;
}

// ---------------------------------------------------------------------------

PerceptualExtractor::PerceptualExtractor(int channels, std::vector<int> feature_layers,
                                         std::uint64_t seed, int blocks)
    : feature_layers_(std::move(feature_layers)) {
  if (channels < 1 || blocks < 1) fail(ErrorKind::Config, "perceptual extractor needs channels, blocks >= 1");
  Rng rng = Rng::derive(seed, {0x7065726370ULL});
  int in = 3;
  for (int b = 0; b < blocks; ++b) {
    Tensor w({channels, in, 3, 3});
    const double sd = std::sqrt(2.0 / (in * 9));
    for (auto& v : w.values()) v = sd * rng.normal();
    weights_.push_back(ad::constant(std::move(w)));
    biases_.push_back(ad::constant(Tensor({channels})));
    in = channels;
  }
  check_layers();
}

PerceptualExtractor PerceptualExtractor::from_file(const std::string& path, std::vector<int> feature_layers) {
  auto tensors = read_tensor_container(path);
  if (tensors.empty() || tensors.size() % 2 != 0)
    fail(ErrorKind::Schema, path + ": extractor weights must be (weight, bias) pairs");
  PerceptualExtractor e;
  e.feature_layers_ = std::move(feature_layers);
  int in = 3;
  for (std::size_t i = 0; i < tensors.size(); i += 2) {
    Tensor& w = tensors[i];
    Tensor& b = tensors[i + 1];
    if (w.rank() != 4 || w.dim(1) != in || w.dim(2) != 3 || w.dim(3) != 3 || b.rank() != 1 ||
        b.dim(0) != w.dim(0))
      fail(ErrorKind::Schema, path + ": extractor block " + std::to_string(i / 2) +
                                  " has shapes " + w.shape_string() + " / " + b.shape_string() +
                                  "; expected [C," + std::to_string(in) + ",3,3] / [C]");
    in = w.dim(0);
    e.weights_.push_back(ad::constant(std::move(w)));
    e.biases_.push_back(ad::constant(std::move(b)));
  }
  e.check_layers();
  return e;
}

void PerceptualExtractor::check_layers() const {
  if (feature_layers_.empty()) fail(ErrorKind::Config, "perceptual extractor needs at least one feature layer");
  for (int l : feature_layers_)
    if (l < 0 || l >= blocks())
      fail(ErrorKind::Config, "perceptual feature layer " + std::to_string(l) + " out of range");
}

void PerceptualExtractor::save(const std::string& path) const {
  std::vector<Tensor> out;
  for (int b = 0; b < blocks(); ++b) {
    out.push_back(weights_[b]->value);
    out.push_back(biases_[b]->value);
  }
  write_tensor_container(path, out);
}

std::vector<ad::Var> PerceptualExtractor::features(const ad::Var& x) const {
  std::vector<ad::Var> layers;
  ad::Var h = x;
  const int last = *std::max_element(feature_layers_.begin(), feature_layers_.end());
  for (int b = 0; b <= last; ++b) {
    h = ad::avg_pool2(ad::leaky_relu(ad::conv2d(h, weights_[b], biases_[b], 1, 1), 0.1));
    layers.push_back(h);
  }
  std::vector<ad::Var> out;
  for (int l : feature_layers_) out.push_back(layers[l]);
  return out;
}

std::vector<double> PerceptualExtractor::snapshot() const {
  std::vector<double> out;
  for (int b = 0; b < blocks(); ++b) {
    out.insert(out.end(), weights_[b]->value.storage().begin(), weights_[b]->value.storage().end());
    out.insert(out.end(), biases_[b]->value.storage().begin(), biases_[b]->value.storage().end());
  }
  return out;
}

double perceptual_loss(const Tensor& x, const Tensor& x_hat, const PerceptualExtractor& extractor) {
  return ad::perceptual_loss(x, ad::constant(x_hat), extractor)->value[0];
}

namespace ad {

Var smooth_l1(const Var& pred, std::vector<std::size_t> indices, std::vector<double> targets, double beta) {
  require(indices.size() == targets.size(), "smooth_l1: indices/targets mismatch");
  return scalar_fn(pred, [idx = std::move(indices), tgt = std::move(targets), beta](const Tensor& v) {
    std::vector<double> picked(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) picked[i] = v[idx[i]];
    auto r = homdet::smooth_l1(picked, tgt, beta);
    Tensor g(v.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += r.grad[i];
    return std::pair{r.value, std::move(g)};
  });
}

Var focal_loss(const Var& probs, std::vector<std::size_t> indices, std::vector<int> targets,
               const FocalParams& params) {
  require(indices.size() == targets.size(), "focal_loss: indices/targets mismatch");
  return scalar_fn(probs, [idx = std::move(indices), tgt = std::move(targets), params](const Tensor& v) {
    std::vector<double> picked(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) picked[i] = v[idx[i]];
    auto r = homdet::focal_loss(picked, tgt, params);
    Tensor g(v.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += r.grad[i];
    return std::pair{r.value, std::move(g)};
  });
}

Var domain_cross_entropy(const Var& logits, std::vector<int> domain_ids) {
  require(logits->value.rank() == 2, "domain_cross_entropy: logits must be [N, D]");
  const int d = logits->value.dim(1);
  return scalar_fn(logits, [ids = std::move(domain_ids), d](const Tensor& v) {
    auto r = homdet::domain_cross_entropy(v.values(), d, ids);
    return std::pair{r.value, Tensor(v.shape(), std::move(r.grad))};
  });
}

Var perceptual_loss(const Tensor& x, const Var& x_hat, const PerceptualExtractor& extractor) {
  if (!x.same_shape(x_hat->value))
    fail(ErrorKind::Contract, "perceptual_loss: shape mismatch " + x.shape_string() + " vs " +
                                  x_hat->value.shape_string());
  auto target = extractor.features(constant(x));
  auto recon = extractor.features(x_hat);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < target.size(); ++i) terms.push_back(mean_squared_diff(recon[i], target[i]));
  return weighted_sum(terms, std::vector<double>(terms.size(), 1.0));
}

}  // namespace ad
}  // namespace homdet

// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Each loss exists as a pure function returning its
// value and analytic gradient, and as an autodiff node built on top of it.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "homdet/autograd.hpp"
#include "homdet/tensor.hpp"

namespace homdet {

inline constexpr double kProbEpsilon = 1e-6;

struct LossWeights {
  double lambda1 = 10.0;  // perceptual
  double lambda2 = 25.0;  // domain cross-entropy
  void validate() const;
};

struct LossBreakdown {
  double l_bb = 0, l_inst = 0, l_percep = 0, l_ce = 0, total = 0;
};

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
  void validate() const;
};

struct LossValue {
  double value = 0;
  std::vector<double> grad;  // d value / d input, same length as the input
};

/// Mean over elements of 0.5 d^2 / beta (|d| < beta) or |d| - 0.5 beta.
LossValue smooth_l1(std::span<const double> pred, std::span<const double> target, double beta = 1.0);

/// Σ -α_t (1 - p_t)^γ ln p_t / max(1, #targets equal to 1). Targets are
/// 0, 1, or -1 (ignored). Probabilities are clamped to [ε, 1 - ε].
LossValue focal_loss(std::span<const double> probs, std::span<const int> targets,
                     const FocalParams& params = {});

/// Mean over rows of -ln softmax(row)[id]. `logits` is row-major
/// [rows, num_domains].
LossValue domain_cross_entropy(std::span<const double> logits, int num_domains,
                               std::span<const int> domain_ids);

/// Sum of the four terms with λ1, λ2 applied. Throws DivergenceError on a
/// non-finite component.
LossBreakdown total_loss(double l_bb, double l_inst, double l_percep, double l_ce,
                         const LossWeights& w);

/// Fixed feature network for the perceptual term: `blocks` of
/// conv3x3 - leaky ReLU - 2x2 average pool. Parameters never receive
/// gradients.
class PerceptualExtractor {
 public:
  PerceptualExtractor() = default;
  /// Deterministic seeded weights.
  PerceptualExtractor(int channels, std::vector<int> feature_layers, std::uint64_t seed,
                      int blocks = 3);
  /// Weights from a tensor container: [w0, b0, w1, b1, ...] in block order.
  static PerceptualExtractor from_file(const std::string& path, std::vector<int> feature_layers);

  void save(const std::string& path) const;

  /// Outputs of the configured feature layers.
  std::vector<ad::Var> features(const ad::Var& x) const;
  int blocks() const { return static_cast<int>(weights_.size()); }
  const std::vector<int>& feature_layers() const { return feature_layers_; }
  /// Flattened copy of every parameter, for frozen-weight checks.
  std::vector<double> snapshot() const;

 private:
  void check_layers() const;

  std::vector<ad::Var> weights_;
  std::vector<ad::Var> biases_;
  std::vector<int> feature_layers_;
};

/// Σ over feature layers of the mean squared feature difference.
double perceptual_loss(const Tensor& x, const Tensor& x_hat, const PerceptualExtractor& extractor);

namespace ad {

/// smooth_l1 over the elements of `pred` listed in `indices`.
Var smooth_l1(const Var& pred, std::vector<std::size_t> indices, std::vector<double> targets,
              double beta);
/// focal_loss over the elements of `probs` listed in `indices`.
Var focal_loss(const Var& probs, std::vector<std::size_t> indices, std::vector<int> targets,
               const FocalParams& params);
/// domain_cross_entropy on a [N, D] logits node.
Var domain_cross_entropy(const Var& logits, std::vector<int> domain_ids);
/// Perceptual distance between a constant target image and a reconstruction.
Var perceptual_loss(const Tensor& x, const Var& x_hat, const PerceptualExtractor& extractor);

}  // namespace ad

}  // namespace homdet

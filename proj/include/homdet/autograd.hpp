// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over Tensor values. Every op
// returns a node that remembers its inputs and a closure that pushes its
// gradient back into them. `backward` runs the closures in reverse
// topological order from a scalar root.
#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "homdet/tensor.hpp"

namespace homdet::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
    return grad;
  }
  void zero_grad() { grad = Tensor(); }
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad);

/// Backpropagate d(root)/d(.) into every reachable node that requires grad.
/// `root` must hold a single element.
void backward(const Var& root);

// Convolution with square kernels; weight layout [out, in, k, k].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var add(const Var& a, const Var& b);
Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);
Var avg_pool2(const Var& x);
Var upsample2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var global_avg_pool(const Var& x);  // [N,C,H,W] -> [N,C]
Var linear(const Var& x, const Var& weight, const Var& bias);  // [N,I] x [O,I] -> [N,O]

/// Identity forward; backward multiplies the incoming gradient by -strength.
Var grad_reverse(const Var& x, double strength);

/// Σ w_i · s_i over scalar nodes.
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights);

/// Rearranges per-level head maps [N, A*K, H, W] into [N, Σ H·W·A, K] with
/// anchors ordered level-major, then row-major cells, then anchor index.
Var gather_anchors(const std::vector<Var>& levels, int anchors_per_cell, int k);

/// Gathers the given rows of the leading (batch) dimension.
Var select_batch(const Var& x, const std::vector<int>& rows);

/// Scalar function of a node given as (value, gradient) of its input.
using ScalarFn = std::function<std::pair<double, Tensor>(const Tensor&)>;
Var scalar_fn(const Var& x, ScalarFn fn);

/// mean((a - b)^2) over all elements; either side may be constant.
Var mean_squared_diff(const Var& a, const Var& b);

}  // namespace homdet::ad

// SPDX-License-Identifier: Apache-2.0
#include "homdet/autograd.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <unordered_set>

#include "homdet/error.hpp"

namespace homdet::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

Var make_node(Tensor value, std::vector<Var> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->parents = std::move(parents);
  return n;
}

void require_rank4(const Tensor& t, const char* op) {
  if (!(t.rank() == 4)) fail(ErrorKind::Contract, std::string(op) + ": expected NCHW tensor, got " + t.shape_string());
}

struct ConvGeom {
  int channels, height, width, kernel, stride, pad, out_h, out_w;
  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h * out_w; }
};

void im2col(const double* img, const ConvGeom& g, double* col) {
  const int p = g.cols();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        double* row = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * p;
        const double* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* col, const ConvGeom& g, double* img) {
  const int p = g.cols();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const double* row =
            col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * p;
        double* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const double* src = row + oy * g.out_w;
          double* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var leaf(Tensor value, bool requires_grad) {
  auto n = constant(std::move(value));
  n->requires_grad = requires_grad;
  return n;
}

void backward(const Var& root) {
  require(root && root->value.size() == 1, "backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Interior gradients are not needed after the sweep; leaves keep theirs.
  for (Node* n : order)
    if (n->backward_fn) n->zero_grad();
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank4(x->value, "conv2d");
  require_rank4(weight->value, "conv2d weight");
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  if (!(wv.dim(1) == xv.dim(1))) fail(ErrorKind::Contract, "conv2d: weight expects " + std::to_string(wv.dim(1)) +
                                      " input channels, got " + std::to_string(xv.dim(1)));
  require(wv.dim(2) == wv.dim(3), "conv2d: square kernels only");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  ConvGeom g{xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), stride, pad, 0, 0};
  g.out_h = (g.height + 2 * pad - g.kernel) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kernel) / stride + 1;
  require(g.out_h > 0 && g.out_w > 0, "conv2d: input smaller than kernel");
  const int batch = xv.dim(0);
  const int out_c = wv.dim(0);
  if (bias) require(bias->value.size() == static_cast<std::size_t>(out_c), "conv2d: bias size");

  Tensor out({batch, out_c, g.out_h, g.out_w});
  RowMat col(g.rows(), g.cols());
  ConstRowMap w(wv.data(), out_c, g.rows());
  const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const std::size_t out_stride = static_cast<std::size_t>(out_c) * g.cols();
  for (int n = 0; n < batch; ++n) {
    im2col(xv.data() + n * in_stride, g, col.data());
    RowMap o(out.data() + n * out_stride, out_c, g.cols());
    o.noalias() = w * col;
    if (bias)
      for (int c = 0; c < out_c; ++c) o.row(c).array() += bias->value[c];
  }

  auto node = make_node(std::move(out), {x, weight, bias});
  if (!node->requires_grad) return node;
  node->backward_fn = [g, batch, out_c, in_stride, out_stride](Node& self) {
    const Var& x = self.parents[0];
    const Var& weight = self.parents[1];
    const Var& bias = self.parents[2];
    const Tensor& dy = self.grad;
    ConstRowMap w(weight->value.data(), out_c, g.rows());
    RowMat col(g.rows(), g.cols());
    RowMat dcol(g.rows(), g.cols());
    for (int n = 0; n < batch; ++n) {
      ConstRowMap d(dy.data() + n * out_stride, out_c, g.cols());
      if (weight->requires_grad) {
        im2col(x->value.data() + n * in_stride, g, col.data());
        RowMap dw(weight->grad_buffer().data(), out_c, g.rows());
        dw.noalias() += d * col.transpose();
      }
      if (bias && bias->requires_grad) {
        Tensor& db = bias->grad_buffer();
        for (int c = 0; c < out_c; ++c) db[c] += d.row(c).sum();
      }
      if (x->requires_grad) {
        dcol.noalias() = w.transpose() * d;
        col2im_add(dcol.data(), g, x->grad_buffer().data() + n * in_stride);
      }
    }
  };
  return node;
}

Var add(const Var& a, const Var& b) {
  if (!(a->value.same_shape(b->value))) fail(ErrorKind::Contract, "add: shape mismatch " + a->value.shape_string() +
                                             " vs " + b->value.shape_string());
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  auto node = make_node(std::move(out), {a, b});
  if (node->requires_grad)
    node->backward_fn = [](Node& self) {
      for (const Var& p : self.parents) {
        if (!p->requires_grad) continue;
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  return node;
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out = x->value;
  for (auto& v : out.values())
    if (v < 0) v *= slope;
  auto node = make_node(std::move(out), {x});
  if (node->requires_grad)
    node->backward_fn = [slope](Node& self) {
      const Var& x = self.parents[0];
      Tensor& g = x->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += x->value[i] < 0 ? slope * self.grad[i] : self.grad[i];
    };
  return node;
}

Var sigmoid(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  auto node = make_node(std::move(out), {x});
  if (node->requires_grad)
    node->backward_fn = [](Node& self) {
      Tensor& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = self.value[i];
        g[i] += self.grad[i] * s * (1.0 - s);
      }
    };
  return node;
}

Var avg_pool2(const Var& x) {
  require_rank4(x->value, "avg_pool2");
  const auto& s = x->value.shape();
  if (!(s[2] % 2 == 0 && s[3] % 2 == 0)) fail(ErrorKind::Contract, "avg_pool2: odd spatial size " + x->value.shape_string());
  Tensor out({s[0], s[1], s[2] / 2, s[3] / 2});
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c)
      for (int y = 0; y < s[2] / 2; ++y)
        for (int xx = 0; xx < s[3] / 2; ++xx)
          out.at(n, c, y, xx) = 0.25 * (x->value.at(n, c, 2 * y, 2 * xx) +
                                        x->value.at(n, c, 2 * y, 2 * xx + 1) +
                                        x->value.at(n, c, 2 * y + 1, 2 * xx) +
                                        x->value.at(n, c, 2 * y + 1, 2 * xx + 1));
  auto node = make_node(std::move(out), {x});
  if (node->requires_grad)
    node->backward_fn = [](Node& self) {
      Tensor& g = self.parents[0]->grad_buffer();
      const auto& os = self.value.shape();
      for (int n = 0; n < os[0]; ++n)
        for (int c = 0; c < os[1]; ++c)
          for (int y = 0; y < os[2]; ++y)
            for (int xx = 0; xx < os[3]; ++xx) {
              const double d = 0.25 * self.grad.at(n, c, y, xx);
              g.at(n, c, 2 * y, 2 * xx) += d;
              g.at(n, c, 2 * y, 2 * xx + 1) += d;
              g.at(n, c, 2 * y + 1, 2 * xx) += d;
              g.at(n, c, 2 * y + 1, 2 * xx + 1) += d;
            }
    };
  return node;
}

Var upsample2(const Var& x) {
  require_rank4(x->value, "upsample2");
  const auto& s = x->value.shape();
  Tensor out({s[0], s[1], s[2] * 2, s[3] * 2});
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c)
      for (int y = 0; y < s[2] * 2; ++y)
        for (int xx = 0; xx < s[3] * 2; ++xx) out.at(n, c, y, xx) = x->value.at(n, c, y / 2, xx / 2);
  auto node = make_node(std::move(out), {x});
  if (node->requires_grad)
    node->backward_fn = [](Node& self) {
      Tensor& g = self.parents[0]->grad_buffer();
      const auto& os = self.value.shape();
      for (int n = 0; n < os[0]; ++n)
        for (int c = 0; c < os[1]; ++c)
          for (int y = 0; y < os[2]; ++y)
            for (int xx = 0; xx < os[3]; ++xx) g.at(n, c, y / 2, xx / 2) += self.grad.at(n, c, y, xx);
    };
  return node;
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank4(a->value, "concat_channels");
  require_rank4(b->value, "concat_channels");
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  require(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3], "concat_channels: shape mismatch");
  const std::size_t plane = static_cast<std::size_t>(sa[2]) * sa[3];
  const std::size_t na = sa[1] * plane, nb = sb[1] * plane;
  Tensor out({sa[0], sa[1] + sb[1], sa[2], sa[3]});
  for (int n = 0; n < sa[0]; ++n) {
    std::copy_n(a->value.data() + n * na, na, out.data() + n * (na + nb));
    std::copy_n(b->value.data() + n * nb, nb, out.data() + n * (na + nb) + na);
  }
  auto node = make_node(std::move(out), {a, b});
  if (node->requires_grad)
    node->backward_fn = [na, nb](Node& self) {
      const int batch = self.value.dim(0);
      for (int which = 0; which < 2; ++which) {
        const Var& p = self.parents[which];
        if (!p->requires_grad) continue;
        Tensor& g = p->grad_buffer();
        const std::size_t len = which == 0 ? na : nb;
        const std::size_t off = which == 0 ? 0 : na;
        for (int n = 0; n < batch; ++n) {
          const double* src = self.grad.data() + n * (na + nb) + off;
          double* dst = g.data() + n * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
    };
  return node;
}

Var global_avg_pool(const Var& x) {
  require_rank4(x->value, "global_avg_pool");
  const auto& s = x->value.shape();
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  Tensor out({s[0], s[1]});
  for (int i = 0; i < s[0] * s[1]; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < plane; ++j) acc += x->value[i * plane + j];
    out[i] = acc / static_cast<double>(plane);
  }
  auto node = make_node(std::move(out), {x});
  if (node->requires_grad)
    node->backward_fn = [plane](Node& self) {
      Tensor& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < self.value.size(); ++i) {
        const double d = self.grad[i] / static_cast<double>(plane);
        for (std::size_t j = 0; j < plane; ++j) g[i * plane + j] += d;
      }
    };
  return node;
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(x->value.rank() == 2 && weight->value.rank() == 2, "linear: expected matrices");
  const int n = x->value.dim(0), in = x->value.dim(1), out_dim = weight->value.dim(0);
  require(weight->value.dim(1) == in, "linear: input width mismatch");
  Tensor out({n, out_dim});
  ConstRowMap xm(x->value.data(), n, in);
  ConstRowMap wm(weight->value.data(), out_dim, in);
  RowMap om(out.data(), n, out_dim);
  om.noalias() = xm * wm.transpose();
  if (bias)
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_dim; ++o) om(i, o) += bias->value[o];
  auto node = make_node(std::move(out), {x, weight, bias});
  if (node->requires_grad)
    node->backward_fn = [n, in, out_dim](Node& self) {
      const Var& x = self.parents[0];
      const Var& weight = self.parents[1];
      const Var& bias = self.parents[2];
      ConstRowMap d(self.grad.data(), n, out_dim);
      if (x->requires_grad) {
        RowMap dx(x->grad_buffer().data(), n, in);
        dx.noalias() += d * ConstRowMap(weight->value.data(), out_dim, in);
      }
      if (weight->requires_grad) {
        RowMap dw(weight->grad_buffer().data(), out_dim, in);
        dw.noalias() += d.transpose() * ConstRowMap(x->value.data(), n, in);
      }
      if (bias && bias->requires_grad) {
        Tensor& db = bias->grad_buffer();
        for (int o = 0; o < out_dim; ++o) db[o] += d.col(o).sum();
      }
    };
  return node;
}

Var grad_reverse(const Var& x, double strength) {
  require(strength >= 0.0, "grad_reverse: strength must be >= 0");
  auto node = make_node(x->value, {x});
  if (node->requires_grad)
    node->backward_fn = [strength](Node& self) {
      Tensor& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += -strength * self.grad[i];
    };
  return node;
}

Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights) {
  require(scalars.size() == weights.size(), "weighted_sum: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require(scalars[i]->value.size() == 1, "weighted_sum: non-scalar term");
    total += weights[i] * scalars[i]->value[0];
  }
  auto node = make_node(Tensor({1}, total), scalars);
  if (node->requires_grad)
    node->backward_fn = [weights](Node& self) {
      for (std::size_t i = 0; i < self.parents.size(); ++i)
        if (self.parents[i]->requires_grad) self.parents[i]->grad_buffer()[0] += weights[i] * self.grad[0];
    };
  return node;
}

Var gather_anchors(const std::vector<Var>& levels, int anchors_per_cell, int k) {
  require(!levels.empty(), "gather_anchors: no levels");
  const int batch = levels.front()->value.dim(0);
  int total = 0;
  for (const auto& l : levels) {
    require_rank4(l->value, "gather_anchors");
    require(l->value.dim(0) == batch && l->value.dim(1) == anchors_per_cell * k,
            "gather_anchors: level channel count mismatch");
    total += l->value.dim(2) * l->value.dim(3) * anchors_per_cell;
  }
  // Visits (output slot, level tensor index) pairs in anchor order.
  auto visit = [batch, total, anchors_per_cell, k](const std::vector<Var>& srcs, auto&& op) {
    for (int n = 0; n < batch; ++n) {
      int a_out = 0;
      for (const Var& l : srcs) {
        const int h = l->value.dim(2), w = l->value.dim(3);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            for (int a = 0; a < anchors_per_cell; ++a, ++a_out)
              for (int j = 0; j < k; ++j) {
                const std::size_t dst = (static_cast<std::size_t>(n) * total + a_out) * k + j;
                const std::size_t src =
                    ((static_cast<std::size_t>(n) * l->value.dim(1) + a * k + j) * h + y) * w + x;
                op(l, dst, src);
              }
      }
    }
  };
  Tensor out({batch, total, k});
  visit(levels, [&out](const Var& l, std::size_t dst, std::size_t src) { out[dst] = l->value[src]; });
  auto node = make_node(std::move(out), levels);
  if (node->requires_grad)
    node->backward_fn = [visit](Node& self) {
      visit(self.parents, [&self](const Var& l, std::size_t dst, std::size_t src) {
        if (l->requires_grad) l->grad_buffer()[src] += self.grad[dst];
      });
    };
  return node;
}

Var select_batch(const Var& x, const std::vector<int>& rows) {
  require(x->value.rank() >= 1, "select_batch: scalar input");
  const int batch = x->value.dim(0);
  const std::size_t inner = batch ? x->value.size() / static_cast<std::size_t>(batch) : 0;
  std::vector<int> shape = x->value.shape();
  shape[0] = static_cast<int>(rows.size());
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < batch, "select_batch: row out of range");
    std::copy_n(x->value.data() + rows[r] * inner, inner, out.data() + r * inner);
  }
  auto node = make_node(std::move(out), {x});
  if (node->requires_grad)
    node->backward_fn = [rows, inner](Node& self) {
      Tensor& g = self.parents[0]->grad_buffer();
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t i = 0; i < inner; ++i) g[rows[r] * inner + i] += self.grad[r * inner + i];
    };
  return node;
}

Var scalar_fn(const Var& x, ScalarFn fn) {
  auto [value, grad] = fn(x->value);
  auto node = make_node(Tensor({1}, value), {x});
  if (node->requires_grad) {
    require(grad.size() == x->value.size(), "scalar_fn: gradient size mismatch");
    node->backward_fn = [grad = std::move(grad)](Node& self) {
      Tensor& g = self.parents[0]->grad_buffer();
      const double s = self.grad[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * grad[i];
    };
  }
  return node;
}

Var mean_squared_diff(const Var& a, const Var& b) {
  if (!(a->value.same_shape(b->value))) fail(ErrorKind::Contract, "mean_squared_diff: shape mismatch " +
                                             a->value.shape_string() + " vs " +
                                             b->value.shape_string());
  const std::size_t count = a->value.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = a->value[i] - b->value[i];
    acc += d * d;
  }
  auto node = make_node(Tensor({1}, acc / static_cast<double>(count)), {a, b});
  if (node->requires_grad)
    node->backward_fn = [count](Node& self) {
      const Var& a = self.parents[0];
      const Var& b = self.parents[1];
      const double s = 2.0 * self.grad[0] / static_cast<double>(count);
      for (int which = 0; which < 2; ++which) {
        const Var& p = self.parents[which];
        if (!p->requires_grad) continue;
        Tensor& g = p->grad_buffer();
        const double sign = which == 0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < count; ++i) g[i] += sign * s * (a->value[i] - b->value[i]);
      }
    };
  return node;
}

}  // namespace homdet::ad

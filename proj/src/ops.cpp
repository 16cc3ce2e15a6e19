#include "pivotmt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "kernels.hpp"
#include "pivotmt/errors.hpp"

namespace pivotmt {

namespace {

using detail::Node;
using Backward = std::function<void(Node&)>;

bool needs_graph(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Wraps freshly computed values into a tensor, wiring the backward rule only
// when some input participates in differentiation.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, Backward backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(data), false);
  if (needs_graph(inputs)) {
    auto& node = out.node();
    node.requires_grad = true;
    for (const auto* t : inputs) node.parents.push_back(t->node_ptr());
    node.backward = std::move(backward);
  }
  return out;
}

Tensor make_result_many(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                        Backward backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(data), false);
  bool any = false;
  if (grad_enabled())
    for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    auto& node = out.node();
    node.requires_grad = true;
    for (const auto& t : inputs) node.parents.push_back(t.node_ptr());
    node.backward = std::move(backward);
  }
  return out;
}

// Gradient buffer of an input, or nullptr if it does not take gradients.
double* grad_of(const Tensor& t) {
  if (!t.requires_grad()) return nullptr;
  return t.node().ensure_grad().data();
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// outer x axis x inner decomposition used by the axis-generic ops.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n, false);
  return make_result({m, n}, std::move(out), {&a, &b}, [a, b, m, k, n](Node& self) {
    if (double* ga = grad_of(a)) kernels::gemm_nt(self.grad.data(), b.values().data(), ga, m, n, k, true);
    if (double* gb = grad_of(b)) kernels::gemm_tn(a.values().data(), self.grad.data(), gb, m, k, n, true);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(g * m * n);
  for (std::size_t i = 0; i < g; ++i)
    kernels::gemm_nn(a.values().data() + i * m * k, b.values().data() + i * k * n,
                     out.data() + i * m * n, m, k, n, false);
  return make_result({g, m, n}, std::move(out), {&a, &b}, [a, b, g, m, k, n](Node& self) {
    double* ga = grad_of(a);
    double* gb = grad_of(b);
    for (std::size_t i = 0; i < g; ++i) {
      const double* dy = self.grad.data() + i * m * n;
      if (ga) kernels::gemm_nt(dy, b.values().data() + i * k * n, ga + i * m * k, m, n, k, true);
      if (gb) kernels::gemm_tn(a.values().data() + i * m * k, dy, gb + i * k * n, m, k, n, true);
    }
  });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw ShapeError("bmm_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  std::vector<double> out(g * m * n);
  for (std::size_t i = 0; i < g; ++i)
    kernels::gemm_nt(a.values().data() + i * m * k, b.values().data() + i * n * k,
                     out.data() + i * m * n, m, k, n, false);
  return make_result({g, m, n}, std::move(out), {&a, &b}, [a, b, g, m, k, n](Node& self) {
    double* ga = grad_of(a);
    double* gb = grad_of(b);
    for (std::size_t i = 0; i < g; ++i) {
      const double* dy = self.grad.data() + i * m * n;
      // dA = dY * B, dB = dY^T * A
      if (ga) kernels::gemm_nn(dy, b.values().data() + i * n * k, ga + i * m * k, m, n, k, true);
      if (gb) kernels::gemm_tn(dy, a.values().data() + i * m * k, gb + i * n * k, m, n, k, true);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [a, b](Node& self) {
    const auto n = self.grad.size();
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    if (double* gb = grad_of(b))
      for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [a, b](Node& self) {
    const auto n = self.grad.size();
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    if (double* gb = grad_of(b))
      for (std::size_t i = 0; i < n; ++i) gb[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [a, b](Node& self) {
    const auto n = self.grad.size();
    const auto av = a.values(), bv = b.values();
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * bv[i];
    if (double* gb = grad_of(b))
      for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return make_result(x.shape(), std::move(out), {&x}, [x, factor](Node& self) {
    double* gx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * factor;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.numel() != x.shape().back()) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                     shape_str(x.shape()));
  }
  const std::size_t n = bias.numel();
  const std::size_t rows = x.numel() / std::max<std::size_t>(n, 1);
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  return make_result(x.shape(), std::move(out), {&x, &bias}, [x, bias, rows, n](Node& self) {
    if (double* gx = grad_of(x))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    if (double* gb = grad_of(bias))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[r * n + j];
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

Tensor mix(const Tensor& a, const Tensor& b, const Tensor& w) {
  require_same_shape(a, b, "mix");
  require_same_shape(a, w, "mix");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values(), wv = w.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::lerp(bv[i], av[i], wv[i]);
  return make_result(a.shape(), std::move(out), {&a, &b, &w}, [a, b, w](Node& self) {
    const auto av = a.values(), bv = b.values(), wv = w.values();
    const auto n = self.grad.size();
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * wv[i];
    if (double* gb = grad_of(b))
      for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i] * (1.0 - wv[i]);
    if (double* gw = grad_of(w))
      for (std::size_t i = 0; i < n; ++i) gw[i] += self.grad[i] * (av[i] - bv[i]);
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    // Branch keeps exp() from overflowing for large |v|.
    if (v >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return make_result(x.shape(), std::move(out), {&x}, [x](Node& self) {
    double* gx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.data[i];
      gx[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  return make_result(x.shape(), std::move(out), {&x}, [x](Node& self) {
    double* gx = grad_of(x);
    const auto xv = x.values();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xv[i];
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      gx[i] += self.grad[i] * d;
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.len == 0) throw ShapeError("softmax over empty axis of " + shape_str(x.shape()));
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {&x}, [x, s](Node& self) {
    double* gx = grad_of(x);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          dot += self.grad[idx] * self.data[idx];
        }
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor prefix_softmax(const Tensor& scores, std::span<const std::size_t> visible) {
  if (scores.rank() != 3) throw ShapeError("prefix_softmax expects rank 3, got " + shape_str(scores.shape()));
  const std::size_t g = scores.dim(0), q = scores.dim(1), k = scores.dim(2);
  if (visible.size() != g * q) {
    throw ShapeError("prefix_softmax: " + std::to_string(visible.size()) +
                     " visibility entries for " + std::to_string(g * q) + " rows");
  }
  std::vector<std::size_t> vis(visible.begin(), visible.end());
  for (auto& v : vis) v = std::min(v, k);
  std::vector<double> out(scores.numel(), 0.0);
  const auto xv = scores.values();
  for (std::size_t r = 0; r < g * q; ++r) {
    const std::size_t n = vis[r];
    if (n == 0) continue;
    const double* row = xv.data() + r * k;
    double* o = out.data() + r * k;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(row[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return make_result(scores.shape(), std::move(out), {&scores},
                     [scores, vis = std::move(vis), k](Node& self) {
                       double* gx = grad_of(scores);
                       for (std::size_t r = 0; r < vis.size(); ++r) {
                         const std::size_t n = vis[r];
                         const double* y = self.data.data() + r * k;
                         const double* dy = self.grad.data() + r * k;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                         for (std::size_t j = 0; j < n; ++j) gx[r * k + j] += y[j] * (dy[j] - dot);
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() != 2 || gain.numel() != x.dim(1) || bias.numel() != x.dim(1)) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " with gain " +
                     shape_str(gain.shape()) + " and bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.dim(0), h = x.dim(1);
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * h;
    double mu = 0.0;
    for (std::size_t j = 0; j < h; ++j) mu += row[j];
    mu /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t j = 0; j < h; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(h);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < h; ++j) {
      const double xh = (row[j] - mu) * is;
      xhat[r * h + j] = xh;
      out[r * h + j] = xh * gv[j] + bv[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [x, gain, bias, rows, h, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        double* gx = grad_of(x);
        double* gg = grad_of(gain);
        double* gb = grad_of(bias);
        const auto gv = gain.values();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * h;
          const double* xh = xhat.data() + r * h;
          if (gg)
            for (std::size_t j = 0; j < h; ++j) gg[j] += dy[j] * xh[j];
          if (gb)
            for (std::size_t j = 0; j < h; ++j) gb[j] += dy[j];
          if (gx) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < h; ++j) {
              const double d = dy[j] * gv[j];
              mean_d += d;
              mean_dx += d * xh[j];
            }
            mean_d /= static_cast<double>(h);
            mean_dx /= static_cast<double>(h);
            for (std::size_t j = 0; j < h; ++j) {
              const double d = dy[j] * gv[j];
              gx[r * h + j] += inv_std[r] * (d - mean_d - xh[j] * mean_dx);
            }
          }
        }
      });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) { return concat(std::vector<Tensor>{a, b}, axis); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const std::size_t rank = parts[0].rank();
  const std::size_t ax = normalize_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == rank;
    for (std::size_t i = 0; ok && i < rank; ++i)
      if (i != ax && p.dim(i) != parts[0].dim(i)) ok = false;
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " and " +
                       shape_str(p.shape()) + " along axis " + std::to_string(ax));
    }
    out_shape[ax] += p.dim(ax);
  }
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.dim(ax) * s.inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * block, block, out.data() + o * s.len * s.inner + offset * s.inner);
    offset += p.dim(ax);
  }
  return make_result_many(out_shape, std::move(out), parts, [parts, offsets, s, ax](Node& self) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      double* gp = grad_of(parts[i]);
      if (!gp) continue;
      const std::size_t block = parts[i].dim(ax) * s.inner;
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = self.grad.data() + o * s.len * s.inner + offsets[i] * s.inner;
        double* dst = gp + o * block;
        for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
      }
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  if (begin > end || end > x.dim(ax)) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for axis " + std::to_string(ax) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = end - begin;
  const std::size_t block = (end - begin) * s.inner;
  std::vector<double> out(shape_numel(out_shape));
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + o * s.len * s.inner + begin * s.inner, block, out.data() + o * block);
  return make_result(out_shape, std::move(out), {&x}, [x, s, begin, block](Node& self) {
    double* gx = grad_of(x);
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = gx + o * s.len * s.inner + begin * s.inner;
      const double* src = self.grad.data() + o * block;
      for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {&x}, [x](Node& self) {
    double* gx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads) {
  if (x.rank() != 2 || x.dim(0) != batch * len || heads == 0 || x.dim(1) % heads != 0) {
    throw ShapeError("split_heads: cannot view " + shape_str(x.shape()) + " as " +
                     std::to_string(batch) + "x" + std::to_string(len) + " with " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t h = x.dim(1), dh = h / heads;
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t hd = 0; hd < heads; ++hd)
        std::copy_n(xv.data() + (b * len + t) * h + hd * dh, dh,
                    out.data() + ((b * heads + hd) * len + t) * dh);
  return make_result({batch * heads, len, dh}, std::move(out), {&x},
                     [x, batch, len, heads, h, dh](Node& self) {
                       double* gx = grad_of(x);
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t t = 0; t < len; ++t)
                           for (std::size_t hd = 0; hd < heads; ++hd) {
                             const double* src = self.grad.data() + ((b * heads + hd) * len + t) * dh;
                             double* dst = gx + (b * len + t) * h + hd * dh;
                             for (std::size_t j = 0; j < dh; ++j) dst[j] += src[j];
                           }
                     });
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads) {
  if (x.rank() != 3 || x.dim(0) != batch * heads || x.dim(1) != len) {
    throw ShapeError("merge_heads: unexpected shape " + shape_str(x.shape()));
  }
  const std::size_t dh = x.dim(2), h = dh * heads;
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t hd = 0; hd < heads; ++hd)
        std::copy_n(xv.data() + ((b * heads + hd) * len + t) * dh, dh,
                    out.data() + (b * len + t) * h + hd * dh);
  return make_result({batch * len, h}, std::move(out), {&x},
                     [x, batch, len, heads, h, dh](Node& self) {
                       double* gx = grad_of(x);
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t t = 0; t < len; ++t)
                           for (std::size_t hd = 0; hd < heads; ++hd) {
                             const double* src = self.grad.data() + (b * len + t) * h + hd * dh;
                             double* dst = gx + ((b * heads + hd) * len + t) * dh;
                             for (std::size_t j = 0; j < dh; ++j) dst[j] += src[j];
                           }
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding table must be rank 2, got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0), h = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  for (int id : idx) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
  }
  std::vector<double> out(idx.size() * h);
  const auto tv = table.values();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(tv.data() + static_cast<std::size_t>(idx[i]) * h, h, out.data() + i * h);
  Shape out_shape{idx.size(), h};
  return make_result(std::move(out_shape), std::move(out), {&table}, [table, idx = std::move(idx), h](Node& self) {
    double* gt = grad_of(table);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = gt + static_cast<std::size_t>(idx[i]) * h;
      const double* src = self.grad.data() + i * h;
      for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
    }
  });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout probability must be < 1");
  std::vector<double> mask(x.numel());
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep;
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return make_result(x.shape(), std::move(out), {&x}, [x, mask = std::move(mask)](Node& self) {
    double* gx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({}, {total}, {&x}, [x](Node& self) {
    double* gx = grad_of(x);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor cross_entropy_weighted(const Tensor& logits, std::span<const int> targets,
                              std::span<const double> weights, double label_smoothing) {
  if (logits.rank() != 2) throw ShapeError("cross entropy expects [n x V] logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != n || weights.size() != n) {
    throw ShapeError("cross entropy: " + std::to_string(targets.size()) + " targets and " +
                     std::to_string(weights.size()) + " weights for " + std::to_string(n) + " rows");
  }
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw ContractError("label smoothing must lie in [0, 1)");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw IndexError("target id " + std::to_string(targets[i]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
  }
  const double eps = label_smoothing;
  const double uniform = eps / static_cast<double>(vocab);
  const auto lv = logits.values();
  std::vector<double> probs(n * vocab, 0.0);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    const double* row = lv.data() + i * vocab;
    double mx = row[0];
    for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
    const double lse = mx + std::log(z);
    double row_sum = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      row_sum += row[v];
      probs[i * vocab + v] = std::exp(row[v] - lse);
    }
    const double nll = lse - (1.0 - eps) * row[tgt[i]] - uniform * row_sum;
    total += w[i] * nll;
  }
  return make_result({}, {total}, {&logits},
                     [logits, probs = std::move(probs), tgt = std::move(tgt), w = std::move(w), vocab,
                      eps, uniform](Node& self) {
                       double* gl = grad_of(logits);
                       const double g = self.grad[0];
                       for (std::size_t i = 0; i < w.size(); ++i) {
                         if (w[i] == 0.0) continue;
                         const double s = g * w[i];
                         for (std::size_t v = 0; v < vocab; ++v)
                           gl[i * vocab + v] += s * (probs[i * vocab + v] - uniform);
                         gl[i * vocab + static_cast<std::size_t>(tgt[i])] -= s * (1.0 - eps);
                       }
                     });
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets, double label_smoothing) {
  if (logits.rank() != 2) throw ShapeError("cross entropy expects [n x V] logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0);
  if (n == 0) throw ShapeError("cross entropy over zero positions");
  std::vector<double> weights(n, 1.0 / static_cast<double>(n));
  return cross_entropy_weighted(logits, targets, weights, label_smoothing);
}

}  // namespace pivotmt

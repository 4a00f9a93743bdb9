// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>

#include "qkv/errors.hpp"

namespace qkv {

namespace {

using detail::Node;
using detail::TensorImpl;
using Grads = std::span<std::vector<double>*>;
using ImplPtr = std::shared_ptr<TensorImpl>;

std::shared_ptr<Node> make_node(const char* op,
                                std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return nullptr;
  bool any = false;
  for (const auto* t : inputs) any = any || t->requires_grad();
  if (!any) return nullptr;
  auto node = std::make_shared<Node>();
  node->op = op;
  for (const auto* t : inputs) node->inputs.push_back(t->impl());
  return node;
}

std::size_t resolve_axis(const Tensor& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  const int resolved = axis < 0 ? axis + rank : axis;
  if (resolved < 0 || resolved >= rank) {
    throw IndexError("axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(x.shape()));
  }
  return static_cast<std::size_t>(resolved);
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = arow[t];
      const double* brow = b + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* g,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double* brow = b + t * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + t] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* g, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = arow[t];
      double* crow = c + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: cannot multiply " + shape_str(as) + " by " +
                          shape_str(bs));
  };
  if (as.size() < 2 || bs.size() < 2) throw mismatch();

  std::size_t batch = 1, m = 0, k = 0, n = 0;
  Shape out_shape;
  bool batched = false;
  if (bs.size() == 2) {
    k = as.back();
    if (bs[0] != k) throw mismatch();
    n = bs[1];
    m = shape_numel(Shape(as.begin(), as.end() - 1));
    out_shape.assign(as.begin(), as.end() - 1);
    out_shape.push_back(n);
  } else if (as.size() == 3 && bs.size() == 3 && as[0] == bs[0] &&
             as[2] == bs[1]) {
    batched = true;
    batch = as[0];
    m = as[1];
    k = as[2];
    n = bs[2];
    out_shape = {batch, m, n};
  } else {
    throw mismatch();
  }

  std::vector<double> out(batch * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t p = 0; p < batch; ++p) {
    gemm_nn(m, k, n, ad + p * m * k, batched ? bd + p * k * n : bd,
            out.data() + p * m * n);
  }

  auto node = make_node("matmul", {&a, &b});
  if (node) {
    ImplPtr ai = a.impl(), bi = b.impl();
    node->backward = [ai, bi, batch, m, k, n, batched](
                         std::span<const double> g, Grads gin) {
      for (std::size_t p = 0; p < batch; ++p) {
        const double* gp = g.data() + p * m * n;
        const double* bp = bi->data.data() + (batched ? p * k * n : 0);
        const double* ap = ai->data.data() + p * m * k;
        if (gin[0]) gemm_nt(m, k, n, gp, bp, gin[0]->data() + p * m * k);
        if (gin[1]) {
          gemm_tn(m, k, n, ap, gp, gin[1]->data() + (batched ? p * k * n : 0));
        }
      }
    };
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), node);
}

Tensor transpose(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() < 2) {
    throw DimensionError("transpose needs rank >= 2, got " + shape_str(s));
  }
  const std::size_t rows = s[s.size() - 2], cols = s.back();
  const std::size_t batch = x.numel() / std::max<std::size_t>(rows * cols, 1);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);

  auto permute = [rows, cols, batch](const double* src, double* dst) {
    for (std::size_t p = 0; p < batch; ++p) {
      const double* sp = src + p * rows * cols;
      double* dp = dst + p * rows * cols;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) dp[j * rows + i] = sp[i * cols + j];
    }
  };
  std::vector<double> out(x.numel());
  permute(x.data().data(), out.data());

  auto node = make_node("transpose", {&x});
  if (node) {
    node->backward = [rows, cols, batch](std::span<const double> g, Grads gin) {
      // The gradient is transposed back: swap roles of rows and cols.
      auto& dst = *gin[0];
      for (std::size_t p = 0; p < batch; ++p) {
        const double* gp = g.data() + p * rows * cols;
        double* dp = dst.data() + p * rows * cols;
        for (std::size_t j = 0; j < cols; ++j)
          for (std::size_t i = 0; i < rows; ++i) dp[i * cols + j] += gp[j * rows + i];
      }
    };
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), node);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto node = make_node("add", {&a, &b});
  if (node) {
    node->backward = [](std::span<const double> g, Grads gin) {
      for (auto* buf : gin) {
        if (!buf) continue;
        for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
      }
    };
  }
  return Tensor::from_op(a.shape(), std::move(out), node);
}

Tensor add_broadcast(const Tensor& x, const Tensor& b) {
  const auto& xs = x.shape();
  const auto& bs = b.shape();
  if (bs.size() > xs.size() ||
      !std::equal(bs.begin(), bs.end(), xs.end() - bs.size())) {
    throw DimensionError("add_broadcast: " + shape_str(bs) +
                         " is not a trailing block of " + shape_str(xs));
  }
  const std::size_t block = b.numel();
  const std::size_t reps = block ? x.numel() / block : 0;
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bd = b.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < block; ++i) out[r * block + i] += bd[i];

  auto node = make_node("add_broadcast", {&x, &b});
  if (node) {
    node->backward = [block, reps](std::span<const double> g, Grads gin) {
      if (gin[0]) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
      }
      if (gin[1]) {
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t i = 0; i < block; ++i) (*gin[1])[i] += g[r * block + i];
      }
    };
  }
  return Tensor::from_op(xs, std::move(out), node);
}

Tensor mul(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor;
  auto node = make_node("mul", {&x});
  if (node) {
    node->backward = [factor](std::span<const double> g, Grads gin) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
    };
  }
  return Tensor::from_op(x.shape(), std::move(out), node);
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw DimensionError("mul_scalar: expected one-element factor, got " +
                         shape_str(s.shape()));
  }
  const double factor = s.data()[0];
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor;
  auto node = make_node("mul_scalar", {&x, &s});
  if (node) {
    ImplPtr xi = x.impl();
    node->backward = [xi, factor](std::span<const double> g, Grads gin) {
      if (gin[0]) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
      }
      if (gin[1]) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xi->data[i];
        (*gin[1])[0] += acc;
      }
    };
  }
  return Tensor::from_op(x.shape(), std::move(out), node);
}

Tensor exp(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xd[i]);
  auto node = make_node("exp", {&x});
  if (node) {
    node->backward = [y = out](std::span<const double> g, Grads gin) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * y[i];
    };
  }
  return Tensor::from_op(x.shape(), std::move(out), node);
}

namespace {
thread_local ReluPattern* active_pattern = nullptr;
}  // namespace

ReluPattern::ReluPattern() : prev_(active_pattern), digest_(0xcbf29ce484222325ULL) {
  active_pattern = this;
}

ReluPattern::~ReluPattern() { active_pattern = prev_; }

void ReluPattern::fold(std::span<const double> x) {
  for (double v : x) {
    digest_ ^= v > 0.0 ? 1u : 2u;
    digest_ *= 0x100000001b3ULL;
  }
  count_ += x.size();
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xd = x.data();
  if (active_pattern) active_pattern->fold(xd);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  auto node = make_node("relu", {&x});
  if (node) {
    ImplPtr xi = x.impl();
    node->backward = [xi](std::span<const double> g, Grads gin) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xi->data[i] > 0.0) (*gin[0])[i] += g[i];
      }
    };
  }
  return Tensor::from_op(x.shape(), std::move(out), node);
}

Tensor softmax_axis(const Tensor& x, int axis) {
  const auto sp = split_axis(x.shape(), resolve_axis(x, axis));
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < sp.len; ++t) mx = std::max(mx, xd[base + t * sp.inner]);
      double z = 0.0;
      for (std::size_t t = 0; t < sp.len; ++t) {
        double e = std::exp(xd[base + t * sp.inner] - mx);
        out[base + t * sp.inner] = e;
        z += e;
      }
      for (std::size_t t = 0; t < sp.len; ++t) out[base + t * sp.inner] /= z;
    }
  }
  auto node = make_node("softmax", {&x});
  if (node) {
    node->backward = [y = out, sp](std::span<const double> g, Grads gin) {
      auto& dx = *gin[0];
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = o * sp.len * sp.inner + in;
          double dot = 0.0;
          for (std::size_t t = 0; t < sp.len; ++t) {
            const std::size_t idx = base + t * sp.inner;
            dot += g[idx] * y[idx];
          }
          for (std::size_t t = 0; t < sp.len; ++t) {
            const std::size_t idx = base + t * sp.inner;
            dx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    };
  }
  return Tensor::from_op(x.shape(), std::move(out), node);
}

Tensor l2_normalize_axis(const Tensor& x, int axis, double eps) {
  if (!(eps > 0.0)) throw Error("l2_normalize_axis: eps must be positive");
  const auto sp = split_axis(x.shape(), resolve_axis(x, axis));
  std::vector<double> out(x.numel());
  std::vector<double> denom(sp.outer * sp.inner);
  auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double ss = 0.0;
      for (std::size_t t = 0; t < sp.len; ++t) {
        const double v = xd[base + t * sp.inner];
        ss += v * v;
      }
      const double d = std::max(std::sqrt(ss), eps);
      denom[o * sp.inner + in] = d;
      for (std::size_t t = 0; t < sp.len; ++t) {
        out[base + t * sp.inner] = xd[base + t * sp.inner] / d;
      }
    }
  }
  auto node = make_node("l2_normalize", {&x});
  if (node) {
    node->backward = [y = out, denom = std::move(denom), sp, eps](
                         std::span<const double> g, Grads gin) {
      auto& dx = *gin[0];
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = o * sp.len * sp.inner + in;
          const double d = denom[o * sp.inner + in];
          // The clamped branch has a constant denominator.
          double dot = 0.0;
          if (d > eps) {
            for (std::size_t t = 0; t < sp.len; ++t) {
              const std::size_t idx = base + t * sp.inner;
              dot += g[idx] * y[idx];
            }
          }
          for (std::size_t t = 0; t < sp.len; ++t) {
            const std::size_t idx = base + t * sp.inner;
            dx[idx] += (g[idx] - y[idx] * dot) / d;
          }
        }
      }
    };
  }
  return Tensor::from_op(x.shape(), std::move(out), node);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm on a scalar");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine params " +
                         shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = d ? x.numel() / d : 0;
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = gd[j] * h + bd[j];
    }
  }
  auto node = make_node("layer_norm", {&x, &gamma, &beta});
  if (node) {
    ImplPtr gi = gamma.impl();
    node->backward = [gi, xhat = std::move(xhat), inv_std = std::move(inv_std),
                      rows, d](std::span<const double> g, Grads gin) {
      const auto& gam = gi->data;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * d;
        const double* hr = xhat.data() + r * d;
        if (gin[1]) for (std::size_t j = 0; j < d; ++j) (*gin[1])[j] += gr[j] * hr[j];
        if (gin[2]) for (std::size_t j = 0; j < d; ++j) (*gin[2])[j] += gr[j];
        if (!gin[0]) continue;
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = gr[j] * gam[j];
          mean_dh += dh;
          mean_dh_h += dh * hr[j];
        }
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        double* dx = gin[0]->data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          dx[j] += inv_std[r] * (gr[j] * gam[j] - mean_dh - hr[j] * mean_dh_h);
        }
      }
    };
  }
  return Tensor::from_op(x.shape(), std::move(out), node);
}

Tensor concat_feature(const Tensor& x, const Tensor& code) {
  if (x.rank() < 1) throw DimensionError("concat_feature on a scalar");
  const auto& cs = code.shape();
  const bool row_shaped = (cs.size() == 2 && cs[0] == 1) || cs.size() == 1;
  if (!row_shaped) {
    throw DimensionError("concat_feature: code must be a single row, got " +
                         shape_str(cs));
  }
  const std::size_t d = x.shape().back();
  const std::size_t c = code.numel();
  const std::size_t rows = shape_numel(Shape(x.shape().begin(), x.shape().end() - 1));
  std::vector<double> out(rows * (d + c));
  auto xd = x.data();
  auto cd = code.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xd.data() + r * d, d, out.data() + r * (d + c));
    std::copy_n(cd.data(), c, out.data() + r * (d + c) + d);
  }
  Shape out_shape = x.shape();
  out_shape.back() = d + c;
  auto node = make_node("concat_feature", {&x, &code});
  if (node) {
    node->backward = [rows, d, c](std::span<const double> g, Grads gin) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * (d + c);
        if (gin[0]) for (std::size_t j = 0; j < d; ++j) (*gin[0])[r * d + j] += gr[j];
        if (gin[1]) for (std::size_t j = 0; j < c; ++j) (*gin[1])[j] += gr[d + j];
      }
    };
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), node);
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() < 1) throw DimensionError("slice_last on a scalar");
  const std::size_t d = x.shape().back();
  if (begin > end || end > d) {
    throw IndexError("slice_last: [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  const std::size_t rows = d ? x.numel() / d : 0;
  std::vector<double> out(rows * w);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xd.data() + r * d + begin, w, out.data() + r * w);
  }
  Shape out_shape = x.shape();
  out_shape.back() = w;
  auto node = make_node("slice_last", {&x});
  if (node) {
    node->backward = [rows, d, w, begin](std::span<const double> g, Grads gin) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) (*gin[0])[r * d + begin + j] += g[r * w + j];
    };
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), node);
}

Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_last of zero tensors");
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape l(p.shape().begin(), p.shape().end() - 1);
    if (p.rank() != parts[0].rank() || l != lead) {
      throw DimensionError("concat_last: " + shape_str(p.shape()) +
                           " does not match " + shape_str(parts[0].shape()));
    }
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pd = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pd.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  Shape out_shape = lead;
  out_shape.push_back(total);

  std::shared_ptr<Node> node;
  if (grad_enabled() && std::any_of(parts.begin(), parts.end(),
                                    [](const Tensor& t) { return t.requires_grad(); })) {
    node = std::make_shared<Node>();
    node->op = "concat_last";
    for (const auto& p : parts) node->inputs.push_back(p.impl());
    node->backward = [rows, total, widths](std::span<const double> g, Grads gin) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        if (gin[k]) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[k]; ++j)
              (*gin[k])[r * widths[k] + j] += g[r * total + off + j];
        }
        off += widths[k];
      }
    };
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), node);
}

Tensor pick(const Tensor& x, std::size_t index) {
  if (index >= x.numel()) {
    throw IndexError("pick: index " + std::to_string(index) +
                     " out of range for " + shape_str(x.shape()));
  }
  auto node = make_node("pick", {&x});
  if (node) {
    node->backward = [index](std::span<const double> g, Grads gin) {
      (*gin[0])[index] += g[0];
    };
  }
  return Tensor::from_op(Shape{}, {x.data()[index]}, node);
}

Tensor mean_axis(const Tensor& x, int axis) {
  const std::size_t ax = resolve_axis(x, axis);
  const auto sp = split_axis(x.shape(), ax);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t t = 0; t < sp.len; ++t)
      for (std::size_t in = 0; in < sp.inner; ++in)
        out[o * sp.inner + in] += xd[(o * sp.len + t) * sp.inner + in];
  const double scale = 1.0 / static_cast<double>(sp.len);
  for (auto& v : out) v *= scale;
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  auto node = make_node("mean_axis", {&x});
  if (node) {
    node->backward = [sp, scale](std::span<const double> g, Grads gin) {
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t t = 0; t < sp.len; ++t)
          for (std::size_t in = 0; in < sp.inner; ++in)
            (*gin[0])[(o * sp.len + t) * sp.inner + in] += g[o * sp.inner + in] * scale;
    };
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), node);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto node = make_node("reshape", {&x});
  if (node) {
    node->backward = [](std::span<const double> g, Grads gin) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    };
  }
  return Tensor::from_op(std::move(shape), std::move(out), node);
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto node = make_node("sum", {&x});
  if (node) {
    node->backward = [](std::span<const double> g, Grads gin) {
      for (auto& v : *gin[0]) v += g[0];
    };
  }
  return Tensor::from_op(Shape{}, {acc}, node);
}

Tensor sum_squares(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v * v;
  auto node = make_node("sum_squares", {&x});
  if (node) {
    ImplPtr xi = x.impl();
    node->backward = [xi](std::span<const double> g, Grads gin) {
      for (std::size_t i = 0; i < xi->data.size(); ++i) {
        (*gin[0])[i] += 2.0 * xi->data[i] * g[0];
      }
    };
  }
  return Tensor::from_op(Shape{}, {acc}, node);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy expects [B x K] logits, got " +
                         shape_str(logits.shape()));
  }
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(b));
  }
  if (b == 0) throw DimensionError("cross_entropy on an empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw IndexError("cross_entropy: label " + std::to_string(y) +
                       " outside [0, " + std::to_string(k) + ")");
    }
  }
  auto ld = logits.data();
  std::vector<double> probs(b * k);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = ld.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - mx);
      z += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
    total += (mx + std::log(z)) - row[labels[i]];
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  auto node = make_node("cross_entropy", {&logits});
  if (node) {
    std::vector<int> ys(labels.begin(), labels.end());
    node->backward = [probs = std::move(probs), ys = std::move(ys), b, k,
                      inv_b](std::span<const double> g, Grads gin) {
      auto& dx = *gin[0];
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double onehot = static_cast<std::size_t>(ys[i]) == j ? 1.0 : 0.0;
          dx[i * k + j] += g[0] * inv_b * (probs[i * k + j] - onehot);
        }
      }
    };
  }
  return Tensor::from_op(Shape{}, {total * inv_b}, node);
}

}  // namespace qkv

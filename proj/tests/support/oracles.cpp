// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <stdexcept>

namespace oracle {

namespace {

std::vector<double> values(const qkv::Model& m, const std::string& name) {
  auto d = m.params().get(name).data();
  return {d.begin(), d.end()};
}

Mat weight(const qkv::Model& m, const std::string& name) {
  return from_tensor(m.params().get(name));
}

Mat linear(const qkv::Model& m, const Mat& x, const std::string& base, bool bias) {
  Mat y = matmul(x, weight(m, base + ".weight"));
  return bias ? add_row(y, values(m, base + ".bias")) : y;
}

// One stream of the embedder: layers [0, L) with relu between them.
Mat stream(const qkv::Model& m, const Mat& x, const std::string& prefix,
           const qkv::EmbedConfig& e, const std::string& s) {
  using qkv::Variant;
  std::vector<std::string> owners;
  switch (e.variant) {
    case Variant::Conventional: owners = {s}; break;
    case Variant::SNE: owners.assign(static_cast<std::size_t>(e.layers), s); break;
    case Variant::PSNE: owners = {s, "shared"}; break;
    case Variant::FSNE: owners = {"shared", "shared"}; break;
  }
  Mat h = x;
  for (std::size_t l = 0; l < owners.size(); ++l) {
    if (l > 0) h = relu(h);
    h = linear(m, h, prefix + "." + owners[l] + "." + std::to_string(l), e.use_bias);
  }
  return h;
}

}  // namespace

Mat from_tensor(const qkv::Tensor& t) {
  Mat m;
  if (t.rank() == 1) {
    m = Mat(1, t.dim(0));
  } else if (t.rank() == 2) {
    m = Mat(t.dim(0), t.dim(1));
  } else {
    throw std::invalid_argument("oracle::from_tensor expects rank 1 or 2");
  }
  auto d = t.data();
  std::copy(d.begin(), d.end(), m.v.begin());
  return m;
}

qkv::Tensor to_tensor(const Mat& m) { return qkv::Tensor({m.rows, m.cols}, m.v); }

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw std::invalid_argument("oracle::matmul extents");
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < a.cols; ++t) s += a(i, t) * b(t, j);
      c(i, j) = s;
    }
  return c;
}

Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

Mat add(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < c.v.size(); ++i) c.v[i] += b.v[i];
  return c;
}

Mat add_row(const Mat& a, const std::vector<double>& row) {
  Mat c = a;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) c(i, j) += row[j];
  return c;
}

Mat relu(const Mat& a) {
  Mat c = a;
  for (auto& x : c.v) x = x > 0.0 ? x : 0.0;
  return c;
}

Mat scale(const Mat& a, double s) {
  Mat c = a;
  for (auto& x : c.v) x *= s;
  return c;
}

Mat softmax_rows(const Mat& a) {
  Mat c(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double mx = a(i, 0);
    for (std::size_t j = 1; j < a.cols; ++j) mx = std::max(mx, a(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) z += std::exp(a(i, j) - mx);
    for (std::size_t j = 0; j < a.cols; ++j) c(i, j) = std::exp(a(i, j) - mx) / z;
  }
  return c;
}

Mat softmax_cols(const Mat& a) { return transpose(softmax_rows(transpose(a))); }

Mat l2_normalize_cols(const Mat& a, double eps) {
  Mat c = a;
  for (std::size_t j = 0; j < a.cols; ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) ss += a(i, j) * a(i, j);
    const double n = std::max(std::sqrt(ss), eps);
    for (std::size_t i = 0; i < a.rows; ++i) c(i, j) = a(i, j) / n;
  }
  return c;
}

Mat layer_norm(const Mat& a, const std::vector<double>& gamma,
               const std::vector<double>& beta, double eps) {
  Mat c(a.rows, a.cols);
  const double n = static_cast<double>(a.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) mean += a(i, j);
    mean /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) var += (a(i, j) - mean) * (a(i, j) - mean);
    var /= n;
    for (std::size_t j = 0; j < a.cols; ++j)
      c(i, j) = gamma[j] * (a(i, j) - mean) / std::sqrt(var + eps) + beta[j];
  }
  return c;
}

Mat append_code(const Mat& x, const std::vector<double>& code) {
  Mat c(x.rows, x.cols + code.size());
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) c(i, j) = x(i, j);
    for (std::size_t j = 0; j < code.size(); ++j) c(i, x.cols + j) = code[j];
  }
  return c;
}

Mat columns(const Mat& a, std::size_t begin, std::size_t end) {
  Mat c(a.rows, end - begin);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = begin; j < end; ++j) c(i, j - begin) = a(i, j);
  return c;
}

Mat hstack(const std::vector<Mat>& parts) {
  std::size_t cols = 0;
  for (const auto& p : parts) cols += p.cols;
  Mat c(parts.front().rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.rows; ++i)
      for (std::size_t j = 0; j < p.cols; ++j) c(i, off + j) = p(i, j);
    off += p.cols;
  }
  return c;
}

std::vector<double> column_means(const Mat& a) {
  std::vector<double> m(a.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) m[j] += a(i, j);
  for (auto& x : m) x /= static_cast<double>(a.rows);
  return m;
}

double cross_entropy(const Mat& logits, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(logits(i, j) - mx);
    const double lse = mx + std::log(z);
    total += lse - logits(i, static_cast<std::size_t>(labels[i]));
  }
  return total / static_cast<double>(logits.rows);
}

Mat self_attention(const Mat& q, const Mat& k, const Mat& v) {
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols));
  return matmul(softmax_rows(scale(matmul(q, transpose(k)), s)), v);
}

Mat xca_weights(const Mat& q, const Mat& k, double tau) {
  const Mat qn = l2_normalize_cols(q);
  const Mat kn = l2_normalize_cols(k);
  return softmax_cols(scale(matmul(transpose(kn), qn), 1.0 / tau));
}

Mat xca(const Mat& q, const Mat& k, const Mat& v, double tau) {
  return matmul(v, xca_weights(q, k, tau));
}

Mat patchify(const std::vector<double>& image, std::size_t channels, std::size_t size,
             std::size_t patch) {
  const std::size_t grid = size / patch;
  Mat t(grid * grid, channels * patch * patch);
  for (std::size_t gy = 0; gy < grid; ++gy)
    for (std::size_t gx = 0; gx < grid; ++gx) {
      std::size_t col = 0;
      for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            t(gy * grid + gx, col++) =
                image[ch * size * size + (gy * patch + y) * size + gx * patch + x];
    }
  return t;
}

Mat model_logits(const qkv::Model& model, const qkv::Tensor& images) {
  const auto& cfg = model.config();
  const auto& e = cfg.embed;
  const std::size_t per = cfg.in_channels * cfg.image_size * cfg.image_size;
  const std::size_t heads = cfg.heads, dh = cfg.d / heads;
  Mat out(images.dim(0), cfg.num_classes);
  for (std::size_t b = 0; b < images.dim(0); ++b) {
    std::vector<double> img(images.data().begin() + static_cast<std::ptrdiff_t>(b * per),
                            images.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * per));
    Mat x = matmul(patchify(img, cfg.in_channels, cfg.image_size, cfg.patch_size),
                   weight(model, "patch.weight"));
    if (cfg.use_positional) x = add(x, weight(model, "pos"));
    for (std::size_t i = 0; i < cfg.num_encoders; ++i) {
      const std::string p = "blocks." + std::to_string(i);
      const Mat h = layer_norm(x, values(model, p + ".norm1.gamma"),
                               values(model, p + ".norm1.beta"));
      Mat q, k, v;
      if (e.variant == qkv::Variant::FSNE) {
        const std::string cp = e.share_codes ? std::string("codes") : p + ".codes";
        q = stream(model, append_code(h, values(model, cp + ".q")), p + ".embed", e, "q");
        k = stream(model, append_code(h, values(model, cp + ".k")), p + ".embed", e, "k");
        v = stream(model, append_code(h, values(model, cp + ".v")), p + ".embed", e, "v");
      } else {
        q = stream(model, h, p + ".embed", e, "q");
        k = stream(model, h, p + ".embed", e, "k");
        v = stream(model, h, p + ".embed", e, "v");
      }
      std::vector<Mat> head_out;
      const auto log_tau = cfg.attention == qkv::AttentionKind::XCA
                               ? values(model, p + ".attn.log_tau")
                               : std::vector<double>{};
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const Mat qh = columns(q, hd * dh, (hd + 1) * dh);
        const Mat kh = columns(k, hd * dh, (hd + 1) * dh);
        const Mat vh = columns(v, hd * dh, (hd + 1) * dh);
        head_out.push_back(cfg.attention == qkv::AttentionKind::XCA
                               ? xca(qh, kh, vh, std::exp(log_tau[hd]))
                               : self_attention(qh, kh, vh));
      }
      const Mat x1 = add(x, matmul(hstack(head_out), weight(model, p + ".attn.proj.weight")));
      const Mat h2 = layer_norm(x1, values(model, p + ".norm2.gamma"),
                                values(model, p + ".norm2.beta"));
      const Mat f = linear(model, relu(linear(model, h2, p + ".ffn.0", true)), p + ".ffn.1", true);
      x = add(x1, f);
    }
    x = layer_norm(x, values(model, "norm.gamma"), values(model, "norm.beta"));
    Mat pooled(1, cfg.d);
    pooled.v = column_means(x);
    const Mat logits = linear(model, pooled, "head", true);
    for (std::size_t j = 0; j < cfg.num_classes; ++j) out(b, j) = logits(0, j);
  }
  return out;
}

qkv::Tensor random_tensor(const qkv::Shape& shape, std::uint64_t seed, double lo, double hi,
                          bool requires_grad) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(qkv::shape_numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * (static_cast<double>(gen() >> 11) * 0x1.0p-53);
  return qkv::Tensor(shape, std::move(v), requires_grad);
}

double max_abs_diff(const Mat& a, const Mat& b) {
  if (a.v.size() != b.v.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

double max_abs_diff(const qkv::Tensor& a, const Mat& b) {
  auto d = a.data();
  if (d.size() != b.v.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) m = std::max(m, std::abs(d[i] - b.v[i]));
  return m;
}

double max_abs_diff(const qkv::Tensor& a, const qkv::Tensor& b) {
  auto x = a.data(), y = b.data();
  if (x.size() != y.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

bool bitwise_equal(const qkv::Tensor& a, const qkv::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data(), y = b.data();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
}

std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 gen(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[gen() % i]);
  return p;
}

Mat permute_rows(const Mat& a, const std::vector<std::size_t>& perm) {
  Mat c(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) c(i, j) = a(perm[i], j);
  return c;
}

std::vector<double> numeric_grad(const std::function<double()>& f, qkv::Tensor x, double h) {
  qkv::NoGradGuard guard;
  auto d = x.mutable_data();
  std::vector<double> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double keep = d[i];
    d[i] = keep + h;
    const double up = f();
    d[i] = keep - h;
    const double down = f();
    d[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    m = std::max(m, std::abs(a[i] - b[i]) / denom);
  }
  return m;
}

}  // namespace oracle

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstdint>
#include <span>

#include "qkv/tensor.hpp"

namespace qkv {

// Differentiable tensor ops. Every op records a graph node when grad mode is
// on and at least one input requires grad. Broadcasting exists only where an
// op says so explicitly (add_broadcast, concat_feature, layer_norm affine).
// Axis arguments accept negative values counted from the last axis.

/// Matrix product. `a` may carry leading batch dims when `b` is 2-D (rows are
/// flattened); two rank-3 operands with equal leading extent multiply per
/// batch entry.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swaps the last two axes.
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);

/// x + b where b's shape equals the trailing dims of x (bias, positions).
Tensor add_broadcast(const Tensor& x, const Tensor& b);

Tensor mul(const Tensor& x, double factor);

/// x * s for a one-element tensor s.
Tensor mul_scalar(const Tensor& x, const Tensor& s);

Tensor exp(const Tensor& x);

/// max(0, x); subgradient 0 at x == 0.
Tensor relu(const Tensor& x);

/// While alive, folds the sign pattern (x > 0) of every relu input evaluated
/// on this thread into a digest. Two evaluations with equal digests took the
/// same linear piece of every relu. Probes nest; the innermost one records.
class ReluPattern {
 public:
  ReluPattern();
  ~ReluPattern();
  ReluPattern(const ReluPattern&) = delete;
  ReluPattern& operator=(const ReluPattern&) = delete;

  std::uint64_t digest() const { return digest_; }
  std::size_t count() const { return count_; }

  void fold(std::span<const double> x);

 private:
  ReluPattern* prev_;
  std::uint64_t digest_;
  std::size_t count_ = 0;
};

/// Max-subtracted softmax along `axis`.
Tensor softmax_axis(const Tensor& x, int axis);

/// Each slice along `axis` divided by max(||slice||_2, eps).
Tensor l2_normalize_axis(const Tensor& x, int axis, double eps = 1e-12);

/// Normalizes over the last axis, then scales by gamma and shifts by beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Appends the single code row to every row of x: [..., d] -> [..., d + c].
/// The code gradient is the sum of the per-row gradients.
Tensor concat_feature(const Tensor& x, const Tensor& code);

/// Columns [begin, end) of the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end);

Tensor concat_last(std::span<const Tensor> parts);

/// Element `index` of the flattened tensor as a scalar.
Tensor pick(const Tensor& x, std::size_t index);

/// Mean along `axis`, which is removed from the shape.
Tensor mean_axis(const Tensor& x, int axis);

Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);

Tensor sum_squares(const Tensor& x);

/// Batch mean of -log softmax(logits)[label]. Labels must lie in [0, K).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace qkv

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "oracles.hpp"
#include "qkv/ops.hpp"

using namespace qkv;

namespace {

// Backward of a weighted sum sum(r * op(x)) against central differences,
// for every input in `inputs`.
double op_grad_error(const std::function<Tensor()>& op, std::vector<Tensor> inputs,
                     std::uint64_t seed) {
  Shape out_shape;
  {
    NoGradGuard g;
    out_shape = op().shape();
  }
  const auto r = oracle::random_tensor(out_shape, seed ^ 0x5eed, -1, 1);
  const auto rcol = reshape(r, {r.numel(), 1});
  auto weighted = [&] { return sum(matmul(reshape(op(), {1, r.numel()}), rcol)); };
  for (auto& t : inputs) t.zero_grad();
  weighted().backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> ad(t.grad().begin(), t.grad().end());
    auto fd = oracle::numeric_grad([&] { return weighted().item(); }, t, 1e-5);
    worst = std::max(worst, oracle::max_rel_err(ad, fd));
    t.zero_grad();
  }
  return worst;
}

// Uniform values in +-[0.1, 1] so relu probes stay away from the kink.
Tensor away_from_zero(const Shape& shape, std::uint64_t seed) {
  auto t = oracle::random_tensor(shape, seed, 0.1, 1.0, true);
  auto sign = oracle::random_tensor(shape, seed + 99, -1.0, 1.0);
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = sign.data()[i] < 0 ? -d[i] : d[i];
  return t;
}

}  // namespace

class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatmulMatchesFiniteDifferences) {
  const auto s = static_cast<std::uint64_t>(GetParam());
  auto a = oracle::random_tensor({3, 4}, s, -1, 1, true);
  auto b = oracle::random_tensor({4, 2}, s + 7, -1, 1, true);
  EXPECT_LT(op_grad_error([&] { return matmul(a, b); }, {a, b}, s), 1e-6);
}

TEST_P(OpGradient, ReluMatchesFiniteDifferences) {
  const auto s = static_cast<std::uint64_t>(GetParam());
  auto x = away_from_zero({4, 5}, s);
  EXPECT_LT(op_grad_error([&] { return relu(x); }, {x}, s), 1e-6);
}

TEST_P(OpGradient, SoftmaxMatchesFiniteDifferencesOnBothAxes) {
  const auto s = static_cast<std::uint64_t>(GetParam());
  auto x = oracle::random_tensor({3, 4}, s, -2, 2, true);
  EXPECT_LT(op_grad_error([&] { return softmax_axis(x, -1); }, {x}, s), 1e-6);
  EXPECT_LT(op_grad_error([&] { return softmax_axis(x, -2); }, {x}, s + 1), 1e-6);
}

TEST_P(OpGradient, LayerNormMatchesFiniteDifferences) {
  const auto s = static_cast<std::uint64_t>(GetParam());
  auto x = oracle::random_tensor({3, 5}, s, -2, 2, true);
  auto g = oracle::random_tensor({5}, s + 1, 0.5, 1.5, true);
  auto b = oracle::random_tensor({5}, s + 2, -1, 1, true);
  EXPECT_LT(op_grad_error([&] { return layer_norm(x, g, b); }, {x, g, b}, s), 1e-6);
}

TEST_P(OpGradient, ConcatFeatureMatchesFiniteDifferences) {
  const auto s = static_cast<std::uint64_t>(GetParam());
  auto x = oracle::random_tensor({4, 3}, s, -1, 1, true);
  auto c = oracle::random_tensor({1, 2}, s + 5, -1, 1, true);
  EXPECT_LT(op_grad_error([&] { return concat_feature(x, c); }, {x, c}, s), 1e-6);
}

TEST_P(OpGradient, L2NormalizeMatchesFiniteDifferences) {
  const auto s = static_cast<std::uint64_t>(GetParam());
  auto x = oracle::random_tensor({4, 3}, s, -1, 1, true);
  EXPECT_LT(op_grad_error([&] { return l2_normalize_axis(x, -2); }, {x}, s), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(FiveSeeds, OpGradient, ::testing::Range(1, 6));

class OpInvariant : public ::testing::TestWithParam<int> {};

TEST_P(OpInvariant, SoftmaxSlicesSumToOne) {
  const auto s = static_cast<std::uint64_t>(GetParam());
  auto x = oracle::random_tensor({5, 7}, s, -50, 50);
  for (int axis : {-1, -2}) {
    const auto m = oracle::from_tensor(softmax_axis(x, axis));
    const auto t = axis == -1 ? m : oracle::transpose(m);
    for (std::size_t i = 0; i < t.rows; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < t.cols; ++j) total += t(i, j);
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST_P(OpInvariant, L2NormalizedSlicesHaveUnitNorm) {
  const auto s = static_cast<std::uint64_t>(GetParam());
  auto x = oracle::random_tensor({6, 4}, s, -10, 10);
  const auto m = oracle::from_tensor(l2_normalize_axis(x, -2));
  for (std::size_t j = 0; j < m.cols; ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) ss += m(i, j) * m(i, j);
    EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-9);
  }
}

TEST_P(OpInvariant, ConcatCodeGradientIsSumOfRowGradients) {
  const auto s = static_cast<std::uint64_t>(GetParam());
  const std::size_t n = 6, d = 3, c = 4;
  auto x = oracle::random_tensor({n, d}, s);
  auto code = oracle::random_tensor({1, c}, s + 1, -1, 1, true);
  auto up = oracle::random_tensor({n, d + c}, s + 2);
  auto loss = sum(matmul(reshape(concat_feature(x, code), {1, n * (d + c)}),
                         reshape(up, {n * (d + c), 1})));
  loss.backward();
  for (std::size_t j = 0; j < c; ++j) {
    double expected = 0.0;
    for (std::size_t i = 0; i < n; ++i) expected += up.data()[i * (d + c) + d + j];
    EXPECT_DOUBLE_EQ(code.grad()[j], expected);
  }
}

TEST_P(OpInvariant, LayerNormRowsStandardized) {
  const auto s = static_cast<std::uint64_t>(GetParam());
  const auto y = oracle::from_tensor(layer_norm(oracle::random_tensor({3, 16}, s, -5, 5),
                                                Tensor::full({16}, 1.0), Tensor::zeros({16}), 1e-12));
  for (std::size_t i = 0; i < y.rows; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) mean += y(i, j);
    mean /= 16.0;
    for (std::size_t j = 0; j < y.cols; ++j) var += (y(i, j) - mean) * (y(i, j) - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var / 16.0, 1.0, 1e-9);
  }
}

INSTANTIATE_TEST_SUITE_P(TwentySeeds, OpInvariant, ::testing::Range(1, 21));

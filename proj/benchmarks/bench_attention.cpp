// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include <benchmark/benchmark.h>

#include "qkv/attention.hpp"
#include "qkv/ops.hpp"
#include "qkv/random.hpp"

namespace {

qkv::Tensor uniform(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  qkv::Rng rng(seed);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = 2.0 * rng.uniform() - 1.0;
  return qkv::Tensor({rows, cols}, std::move(v));
}

void BM_SelfAttention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = uniform(n, 64, 1), k = uniform(n, 64, 2), v = uniform(n, 64, 3);
  qkv::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(qkv::self_attention(q, k, v));
  state.SetComplexityN(state.range(0));
}

void BM_Xca(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = uniform(n, 64, 1), k = uniform(n, 64, 2), v = uniform(n, 64, 3);
  qkv::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(qkv::xca(q, k, v, 1.0));
  state.SetComplexityN(state.range(0));
}

// Forward and backward through the XCA core.
void BM_XcaBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = uniform(n, 64, 1), k = uniform(n, 64, 2), v = uniform(n, 64, 3);
  for (auto _ : state) {
    auto qq = q.detach().set_requires_grad(true);
    qkv::sum(qkv::xca(qq, k, v, 1.0)).backward();
    benchmark::DoNotOptimize(qq.grad().data());
  }
}

}  // namespace

BENCHMARK(BM_SelfAttention)->RangeMultiplier(4)->Range(16, 1024)->Complexity(benchmark::oNSquared);
BENCHMARK(BM_Xca)->RangeMultiplier(4)->Range(16, 1024)->Complexity(benchmark::oN);
BENCHMARK(BM_XcaBackward)->RangeMultiplier(4)->Range(16, 256);

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include <benchmark/benchmark.h>

#include "qkv/model.hpp"
#include "qkv/ops.hpp"
#include "qkv/random.hpp"

namespace {

qkv::Tensor filled(const qkv::Shape& shape, std::uint64_t seed) {
  qkv::Rng rng(seed);
  std::vector<double> v(qkv::shape_numel(shape));
  for (auto& x : v) x = rng.uniform();
  return qkv::Tensor(shape, std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled({n, n}, 1), b = filled({n, n}, 2);
  qkv::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(qkv::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0) * state.range(0));
}

void BM_ModelForward(benchmark::State& state) {
  qkv::ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.d = 8;
  c.heads = 2;
  c.num_encoders = 2;
  c.embed.d = 8;
  c.embed.hidden = 8;
  c.embed.code_size = 2;
  const qkv::Model model(c, 0);
  const auto images = filled({64, 1, 8, 8}, 3);
  for (auto _ : state) {
    qkv::NoGradGuard no_grad;
    benchmark::DoNotOptimize(model.forward(images));
  }
}

}  // namespace

BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 128);
BENCHMARK(BM_ModelForward);
BENCHMARK_MAIN();

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace qkv {

/// Deterministic random source. Built only on std::mt19937_64, whose output
/// sequence is fixed by the standard, so draws are reproducible across
/// standard libraries (std distributions are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Normal with the given stddev, redrawn until within two stddevs.
  double truncated_normal(double stddev);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a label.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace qkv

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qkv/tensor.hpp"

namespace qkv {

/// Immutable labelled image collection with a fixed train/val split.
struct Dataset {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<double> pixels;  ///< [M x C x H x W], values in [0, 1]
  std::vector<int> labels;     ///< [M], values in [0, num_classes)
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  /// "synthetic:seed=..." or "idx:<digest>".
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return channels * height * width; }
  std::vector<std::size_t> all_indices() const;

  /// Stacks the selected samples into [B x C x H x W].
  Tensor images(std::span<const std::size_t> indices) const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;
};

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t num_samples = 2000;
  std::size_t num_classes = 4;
  std::size_t image_size = 32;
  double noise = 0.25;
};

/// Noise-free class pattern k as [1 x S x S]. Patterns are oriented bars,
/// checkers, rings and blobs; the 16 patterns are pairwise distinct for
/// S >= 8.
Tensor archetype(std::size_t k, std::size_t image_size);

/// Archetype plus uniform noise of the given amplitude, clipped to [0, 1].
/// Classes are balanced (counts differ by at most one), and both the sample
/// order and the 80/20 train/val split are pure functions of the seed.
/// Requires 2 <= K <= 16, M >= 10 K and image_size >= 8.
Dataset gen_synthetic(const SyntheticSpec& spec);

/// Reads an IDX image file (magic 0x00000803, dims M, H, W) and an IDX label
/// file (magic 0x00000801, dim M). Dims are big-endian; pixels are bytes
/// scaled by 1/255. The split is drawn from `split_seed`.
///
/// Throws IdxMagicError, IdxLengthError (count mismatch) or
/// IdxTruncatedError (file shorter than its header promises).
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path,
                 std::uint64_t split_seed = 0);

/// Shuffled mini-batches over `split`, seeded by (seed, epoch). The last
/// partial batch is kept; each index appears exactly once.
std::vector<std::vector<std::size_t>> batches(std::span<const std::size_t> split,
                                              std::size_t batch_size,
                                              std::uint64_t seed,
                                              std::uint64_t epoch);

}  // namespace qkv

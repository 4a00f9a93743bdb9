// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "qkv/model.hpp"

namespace qkv {

// Checkpoint layout, all integers little-endian:
//
//   magic       8 bytes  "QKVCKPT\0"
//   version     u32      1
//   digest      u32 length + ASCII model-config digest
//   config      u32 length + canonical model-config JSON
//   seed        u64      initialization seed
//   count       u32      number of entries
//   entries     per registry entry, in registry order:
//                 u32 name length + name bytes
//                 u32 rank, then rank x u64 extents
//                 numel x f64 (IEEE-754 binary64)

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class LoadMode {
  Strict,   ///< the stored config must match the expected one exactly
  Transfer  ///< configs may differ in num_classes; the head is re-initialized
};

void save_checkpoint(const Model& model, const std::filesystem::path& path);

/// Rebuilds the model described by the file. Throws CheckpointError on a
/// truncated or inconsistent file.
Model load_checkpoint(const std::filesystem::path& path);

/// Loads into a model built from `expected`. In Strict mode a digest
/// mismatch throws DigestMismatchError. In Transfer mode every tensor but
/// the classifier head is restored bitwise (codes included) and the head is
/// drawn fresh from `head_seed`.
Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected,
                      LoadMode mode, std::uint64_t head_seed = 0);

/// Digest stored in the header of a checkpoint file.
std::string checkpoint_digest(const std::filesystem::path& path);

}  // namespace qkv

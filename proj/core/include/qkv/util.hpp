// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace qkv {

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

/// 16 lowercase hex digits of fnv1a64.
std::string hex_digest(std::string_view bytes);

/// Nearest candidate by edit distance, if one is plausibly a typo.
std::optional<std::string> closest_match(std::string_view word,
                                         std::span<const std::string> candidates);

/// Library version string.
std::string_view version();

/// Worker count from QKV_THREADS, else the hardware concurrency (min 1).
unsigned thread_count();

}  // namespace qkv

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <array>
#include <string>

#include "qkv/embed.hpp"

namespace qkv {

using Matrix3 = std::array<std::array<double, 3>, 3>;

/// Relationship between the three trained codes, in Q, K, V order.
struct CodeDiagnostics {
  /// Dot products of the l2-normalized codes.
  Matrix3 correlation{};
  std::array<double, 3> norms{};
  /// Digest of the checkpoint or config the codes came from.
  std::string source_digest;
};

/// M[i][j] = <c_i / |c_i|, c_j / |c_j|>. Throws DegenerateCodeError when a
/// code has zero norm.
Matrix3 code_correlation(const CodeBank& codes);

/// Euclidean norms of C_q, C_k, C_v.
std::array<double, 3> code_norms(const CodeBank& codes);

CodeDiagnostics code_diagnostics(const CodeBank& codes, std::string source_digest);

}  // namespace qkv

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/diagnostics.hpp"

#include <cmath>

#include "qkv/errors.hpp"

namespace qkv {

namespace {

constexpr const char* kCodeNames[3] = {"C_q", "C_k", "C_v"};

std::array<const Tensor*, 3> members(const CodeBank& codes) {
  return {&codes.q, &codes.k, &codes.v};
}

}  // namespace

std::array<double, 3> code_norms(const CodeBank& codes) {
  const auto code = members(codes);
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (double v : code[i]->data()) s += v * v;
    out[i] = std::sqrt(s);
  }
  return out;
}

Matrix3 code_correlation(const CodeBank& codes) {
  const auto norms = code_norms(codes);
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(norms[i] > 0.0)) {
      throw DegenerateCodeError(std::string("code ") + kCodeNames[i] +
                                " has zero norm; correlation is undefined");
    }
  }
  const auto code = members(codes);
  const std::size_t c = codes.size();
  Matrix3 m{};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const auto a = code[i]->data();
      const auto b = code[j]->data();
      double dot = 0.0;
      for (std::size_t t = 0; t < c; ++t) dot += a[t] * b[t];
      m[i][j] = i == j ? 1.0 : dot / (norms[i] * norms[j]);
    }
  }
  return m;
}

CodeDiagnostics code_diagnostics(const CodeBank& codes, std::string source_digest) {
  CodeDiagnostics d;
  d.correlation = code_correlation(codes);
  d.norms = code_norms(codes);
  d.source_digest = std::move(source_digest);
  return d;
}

}  // namespace qkv

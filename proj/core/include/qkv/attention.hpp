// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qkv/embed.hpp"
#include "qkv/params.hpp"
#include "qkv/tensor.hpp"

namespace qkv {

enum class AttentionKind { SA, XCA };

std::string_view attention_name(AttentionKind kind);
std::optional<AttentionKind> parse_attention(std::string_view name);

struct AttentionConfig {
  AttentionKind kind = AttentionKind::XCA;
  std::size_t heads = 4;
  std::size_t d = 32;
  bool proj_bias = false;

  void validate() const;
};

// Single-head cores. Inputs are [N x dh] or batched [B x N x dh].

/// Token attention Softmax(Q K^T / sqrt(dh)), rows normalized over keys.
Tensor self_attention_weights(const Tensor& q, const Tensor& k);
Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Channel attention Softmax(K^T Q / tau) of extent [dh x dh]. Q and K are
/// l2-normalized along the token axis first; the softmax runs over the
/// K-channel (row) index, so every column sums to one. tau = exp(log_tau).
Tensor xca_weights(const Tensor& q, const Tensor& k, const Tensor& log_tau);

/// V * xca_weights(Q, K): each output channel is a convex mix of V channels.
Tensor xca(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& log_tau);
Tensor xca(const Tensor& q, const Tensor& k, const Tensor& v, double tau);

struct AttentionParams {
  Tensor log_tau;  ///< [heads], XCA only; tau stays positive by construction
  Linear proj;     ///< output projection W_o [d x d]
};

/// Splits channels into `heads` contiguous groups, runs the configured core
/// per head, concatenates and applies the output projection.
Tensor multi_head(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                  const AttentionConfig& config, const AttentionParams& params);

std::vector<ParamSpec> attention_param_specs(const AttentionConfig& config,
                                             const std::string& prefix);
AttentionParams bind_attention(const AttentionConfig& config,
                               const ParamRegistry& registry,
                               const std::string& prefix);

}  // namespace qkv

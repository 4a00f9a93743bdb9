// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/attention.hpp"

#include <cctype>
#include <cmath>

#include "qkv/errors.hpp"
#include "qkv/ops.hpp"

namespace qkv {

namespace {

void require_qkv(const Tensor& q, const Tensor& k, const Tensor& v, const char* op) {
  if (q.rank() < 2 || q.rank() > 3 || q.shape() != k.shape() ||
      q.shape() != v.shape()) {
    throw DimensionError(std::string(op) + ": Q " + shape_str(q.shape()) + ", K " +
                         shape_str(k.shape()) + ", V " + shape_str(v.shape()) +
                         " must share one [N x dh] or [B x N x dh] shape");
  }
}

}  // namespace

std::string_view attention_name(AttentionKind kind) {
  return kind == AttentionKind::SA ? "sa" : "xca";
}

std::optional<AttentionKind> parse_attention(std::string_view name) {
  std::string key;
  for (char ch : name) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (key == "sa") return AttentionKind::SA;
  if (key == "xca") return AttentionKind::XCA;
  return std::nullopt;
}

void AttentionConfig::validate() const {
  if (heads == 0) throw ConfigError("attention heads must be positive");
  if (d % heads != 0) {
    throw ConfigError("token width " + std::to_string(d) +
                      " is not divisible by heads " + std::to_string(heads));
  }
}

Tensor self_attention_weights(const Tensor& q, const Tensor& k) {
  require_qkv(q, k, k, "self_attention");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  return softmax_axis(mul(matmul(q, transpose(k)), scale), -1);
}

Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require_qkv(q, k, v, "self_attention");
  return matmul(self_attention_weights(q, k), v);
}

Tensor xca_weights(const Tensor& q, const Tensor& k, const Tensor& log_tau) {
  require_qkv(q, k, k, "xca");
  const auto qn = l2_normalize_axis(q, -2);
  const auto kn = l2_normalize_axis(k, -2);
  const auto inv_tau = exp(mul(log_tau, -1.0));
  return softmax_axis(mul_scalar(matmul(transpose(kn), qn), inv_tau), -2);
}

Tensor xca(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& log_tau) {
  require_qkv(q, k, v, "xca");
  return matmul(v, xca_weights(q, k, log_tau));
}

Tensor xca(const Tensor& q, const Tensor& k, const Tensor& v, double tau) {
  if (!(tau > 0.0)) throw Error("xca: tau must be positive");
  return xca(q, k, v, Tensor::scalar(std::log(tau)));
}

Tensor multi_head(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                  const AttentionConfig& config, const AttentionParams& params) {
  config.validate();
  require_qkv(xq, xk, xv, "multi_head");
  if (xq.shape().back() != config.d) {
    throw DimensionError("multi_head: input width " +
                         std::to_string(xq.shape().back()) + " != d " +
                         std::to_string(config.d));
  }
  const std::size_t dh = config.d / config.heads;
  std::vector<Tensor> heads;
  heads.reserve(config.heads);
  for (std::size_t h = 0; h < config.heads; ++h) {
    const auto q = slice_last(xq, h * dh, (h + 1) * dh);
    const auto k = slice_last(xk, h * dh, (h + 1) * dh);
    const auto v = slice_last(xv, h * dh, (h + 1) * dh);
    if (config.kind == AttentionKind::XCA) {
      heads.push_back(xca(q, k, v, pick(params.log_tau, h)));
    } else {
      heads.push_back(self_attention(q, k, v));
    }
  }
  return params.proj(concat_last(heads));
}

std::vector<ParamSpec> attention_param_specs(const AttentionConfig& config,
                                             const std::string& prefix) {
  config.validate();
  std::vector<ParamSpec> specs;
  if (config.kind == AttentionKind::XCA) {
    specs.push_back({prefix + ".log_tau", {config.heads}, ParamGroup::Attention, Init::Zeros});
  }
  specs.push_back({prefix + ".proj.weight", {config.d, config.d}, ParamGroup::Attention,
                   Init::TruncNormal});
  if (config.proj_bias) {
    specs.push_back({prefix + ".proj.bias", {config.d}, ParamGroup::Attention, Init::Zeros});
  }
  return specs;
}

AttentionParams bind_attention(const AttentionConfig& config,
                               const ParamRegistry& registry,
                               const std::string& prefix) {
  AttentionParams p;
  if (config.kind == AttentionKind::XCA) p.log_tau = registry.get(prefix + ".log_tau");
  p.proj.weight = registry.get(prefix + ".proj.weight");
  if (config.proj_bias) p.proj.bias = registry.get(prefix + ".proj.bias");
  return p;
}

}  // namespace qkv

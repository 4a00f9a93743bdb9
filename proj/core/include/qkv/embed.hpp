// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qkv/params.hpp"
#include "qkv/tensor.hpp"

namespace qkv {

/// QKV embedding structure.
///
/// - Conventional: one linear map per stream.
/// - SNE: per-stream stack of `layers` linear maps with ReLU in between.
/// - PSNE: per-stream first layer, one second layer shared by Q, K and V.
/// - FSNE: both layers shared; each stream appends its own trainable code
///   row to every token before the first layer.
enum class Variant { Conventional, SNE, PSNE, FSNE };

std::string_view variant_name(Variant v);
/// Case-insensitive; accepts "conventional", "sne", "psne", "fsne" (and the
/// hyphenated "p-sne", "f-sne").
std::optional<Variant> parse_variant(std::string_view name);

struct EmbedConfig {
  Variant variant = Variant::FSNE;
  std::size_t d = 32;
  /// Inner width: d_q for SNE, d_s for PSNE, the shared width for FSNE.
  /// Must equal d for Conventional.
  std::size_t hidden = 32;
  /// Code length c; positive for FSNE and zero otherwise.
  std::size_t code_size = 8;
  /// Linear maps per stream in SNE (1..4). Ignored by other variants.
  int layers = 2;
  bool use_bias = false;
  /// FSNE: one code bank for the whole model instead of one per encoder.
  bool share_codes = true;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;
  bool operator==(const EmbedConfig&) const = default;
};

enum class ModelScale { Nano, Tiny };

/// Token width of the nano (128) and tiny (192) models.
std::size_t scale_width(ModelScale scale);

/// Output dimensions of the embedding layers for each variant at nano/tiny
/// scale. `starred` selects the widened FSNE hidden width, which exists for
/// code sizes 8 and 16 only.
EmbedConfig reference_embed_config(ModelScale scale, Variant variant,
                          std::size_t code_size = 8, bool starred = false);

struct EmbedParamBreakdown {
  std::size_t per_block = 0;
  std::size_t codes = 0;
  std::size_t total = 0;
};

/// Exact embedding parameter count for `num_encoders` blocks. Codes are
/// counted once when shared and once per encoder otherwise.
EmbedParamBreakdown embedding_param_count(const EmbedConfig& config,
                                          std::size_t num_encoders);

struct Linear {
  Tensor weight;  ///< [in x out]
  Tensor bias;    ///< [out], undefined when the layer has no bias

  Tensor operator()(const Tensor& x) const;
};

enum class Stream { Q = 0, K = 1, V = 2 };

/// Trainable code rows [1 x c] for the three streams.
struct CodeBank {
  Tensor q, k, v;

  const Tensor& operator[](Stream s) const;
  std::size_t size() const { return q.numel(); }
};

struct QKV {
  Tensor q, k, v;
};

QKV embed_conventional(const Tensor& x, const Linear& wq, const Linear& wk,
                       const Linear& wv);

/// Each stack is a chain of linear maps with ReLU between consecutive maps
/// and none after the last. A one-layer stack is a plain linear map.
QKV embed_sne(const Tensor& x, std::span<const Linear> q_stack,
              std::span<const Linear> k_stack, std::span<const Linear> v_stack);

QKV embed_psne(const Tensor& x, const Linear& q_first, const Linear& k_first,
               const Linear& v_first, const Linear& shared_second);

QKV embed_fsne(const Tensor& x, const CodeBank& codes, const Linear& shared_first,
               const Linear& shared_second);

/// Parameter layout of one embedder. Weights live under `prefix`; FSNE codes
/// under `code_prefix` (pass a model-global prefix for shared codes).
std::vector<ParamSpec> embed_param_specs(const EmbedConfig& config,
                                         const std::string& prefix,
                                         const std::string& code_prefix);

/// A configured embedder bound to parameter storage.
class Embedder {
 public:
  /// Resolves every tensor named by embed_param_specs from `registry`.
  Embedder(const EmbedConfig& config, const ParamRegistry& registry,
           const std::string& prefix, const std::string& code_prefix);

  QKV operator()(const Tensor& x) const;

  const EmbedConfig& config() const { return config_; }
  /// Layer stack of one stream. Shared layers are the same storage in
  /// every stream that uses them.
  std::span<const Linear> stack(Stream s) const {
    return stacks_[static_cast<std::size_t>(s)];
  }
  const std::optional<CodeBank>& codes() const { return codes_; }

 private:
  EmbedConfig config_;
  std::array<std::vector<Linear>, 3> stacks_;
  std::optional<CodeBank> codes_;
};

}  // namespace qkv

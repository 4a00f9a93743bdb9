// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstdint>
#include <vector>

#include "qkv/attention.hpp"
#include "qkv/embed.hpp"
#include "qkv/params.hpp"
#include "qkv/tensor.hpp"

namespace qkv {

/// Simplified XCA-style vision encoder: linear patch embedding, optional
/// learned positions, E pre-norm blocks, final norm, mean-pool, linear head.
struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t in_channels = 1;
  std::size_t d = 32;
  std::size_t num_encoders = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  /// embed.d always mirrors d.
  EmbedConfig embed;
  std::size_t num_classes = 4;
  bool use_positional = true;
  AttentionKind attention = AttentionKind::XCA;

  void validate() const;
  std::size_t num_tokens() const;
  std::size_t patch_dim() const { return in_channels * patch_size * patch_size; }
  AttentionConfig attention_config() const;
};

/// Full parameter layout in registry order, shared tensors listed once.
std::vector<ParamSpec> model_param_specs(const ModelConfig& config);

/// Per-group counts from the layout alone; no weights are allocated.
ParamCounts count_params(const ModelConfig& config);

/// [C x H x W] -> [N x C*p*p]. Patches are taken in row-major order over the
/// patch grid; within a patch the layout is channel, then row, then column.
Tensor patchify(const Tensor& image, std::size_t patch_size);

/// Inverse of patchify for a square image of the given channel count.
Tensor unpatchify(const Tensor& tokens, std::size_t channels,
                  std::size_t image_size, std::size_t patch_size);

/// [B x C x H x W] -> [B x N x C*p*p]; the result carries no graph.
Tensor patchify_batch(const Tensor& images, std::size_t patch_size);

/// tokens * W_patch, plus learned positions when `pos` is defined.
Tensor token_embed(const Tensor& tokens, const Tensor& w_patch, const Tensor& pos);

struct EncoderBlock {
  Tensor norm1_gamma, norm1_beta;
  Embedder embed;
  AttentionConfig attn_config;
  AttentionParams attn;
  Tensor norm2_gamma, norm2_beta;
  Linear ffn_in, ffn_out;
};

/// X1 = X + MultiHead(Embed(LN(X))); X2 = X1 + FFN(LN(X1)).
Tensor encoder_block_forward(const Tensor& x, const EncoderBlock& block);

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Independent deep copy.
  Model clone() const;

  /// images [B x C x H x W] -> logits [B x num_classes].
  Tensor forward(const Tensor& images) const;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  ParamRegistry& params() { return registry_; }
  const ParamRegistry& params() const { return registry_; }
  const std::vector<ParamSpec>& specs() const { return specs_; }
  const std::vector<EncoderBlock>& blocks() const { return blocks_; }

  /// Code bank used by block `i` (FSNE only; throws otherwise).
  const CodeBank& codes(std::size_t block = 0) const;

  /// Redraws every tensor of `group` from its spec under a new seed.
  void reinit_group(ParamGroup group, std::uint64_t seed);

  /// Moves every tensor outside the norm group to a generic point drawn
  /// from N(0, gain^2 / fan_in), fan_in being the leading extent. Used to
  /// probe gradients away from the small-weight initialization.
  void randomize(std::uint64_t seed, double gain = 1.0);

 private:
  void bind();

  ModelConfig config_;
  std::uint64_t seed_;
  std::vector<ParamSpec> specs_;
  ParamRegistry registry_;
  std::vector<EncoderBlock> blocks_;
  Tensor patch_w_, pos_, norm_gamma_, norm_beta_;
  Linear head_;
};

ParamCounts count_params(const Model& model);

}  // namespace qkv

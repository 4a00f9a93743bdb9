// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "qkv/errors.hpp"
#include "qkv/ops.hpp"
#include "qkv/random.hpp"

namespace qkv {

namespace {

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i); }

std::string code_prefix(const ModelConfig& c, std::size_t i) {
  return c.embed.share_codes ? std::string("codes") : block_prefix(i) + ".codes";
}

}  // namespace

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " must be a positive multiple of patch_size " +
                      std::to_string(patch_size));
  }
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (d == 0) throw ConfigError("d must be positive");
  if (num_encoders < 1) throw ConfigError("num_encoders must be at least 1");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be at least 1");
  if (embed.d != d) {
    throw ConfigError("embed.d " + std::to_string(embed.d) + " differs from d " +
                      std::to_string(d));
  }
  embed.validate();
  attention_config().validate();
}

std::size_t ModelConfig::num_tokens() const {
  const auto side = image_size / patch_size;
  return side * side;
}

AttentionConfig ModelConfig::attention_config() const {
  AttentionConfig a;
  a.kind = attention;
  a.heads = heads;
  a.d = d;
  return a;
}

std::vector<ParamSpec> model_param_specs(const ModelConfig& config) {
  config.validate();
  std::vector<ParamSpec> specs;
  std::unordered_set<std::string> seen;
  auto push = [&](ParamSpec s) {
    if (seen.insert(s.name).second) specs.push_back(std::move(s));
  };

  push({"patch.weight", {config.patch_dim(), config.d}, ParamGroup::Patch, Init::TruncNormal});
  if (config.use_positional) {
    push({"pos", {config.num_tokens(), config.d}, ParamGroup::Positional, Init::TruncNormal});
  }
  const auto attn = config.attention_config();
  const std::size_t hidden = config.mlp_ratio * config.d;
  for (std::size_t i = 0; i < config.num_encoders; ++i) {
    const auto p = block_prefix(i);
    push({p + ".norm1.gamma", {config.d}, ParamGroup::Norm, Init::Ones});
    push({p + ".norm1.beta", {config.d}, ParamGroup::Norm, Init::Zeros});
    for (auto& s : embed_param_specs(config.embed, p + ".embed", code_prefix(config, i))) {
      push(std::move(s));
    }
    for (auto& s : attention_param_specs(attn, p + ".attn")) push(std::move(s));
    push({p + ".norm2.gamma", {config.d}, ParamGroup::Norm, Init::Ones});
    push({p + ".norm2.beta", {config.d}, ParamGroup::Norm, Init::Zeros});
    push({p + ".ffn.0.weight", {config.d, hidden}, ParamGroup::Ffn, Init::TruncNormal});
    push({p + ".ffn.0.bias", {hidden}, ParamGroup::Ffn, Init::Zeros});
    push({p + ".ffn.1.weight", {hidden, config.d}, ParamGroup::Ffn, Init::TruncNormal});
    push({p + ".ffn.1.bias", {config.d}, ParamGroup::Ffn, Init::Zeros});
  }
  push({"norm.gamma", {config.d}, ParamGroup::Norm, Init::Ones});
  push({"norm.beta", {config.d}, ParamGroup::Norm, Init::Zeros});
  push({"head.weight", {config.d, config.num_classes}, ParamGroup::Head, Init::TruncNormal});
  push({"head.bias", {config.num_classes}, ParamGroup::Head, Init::Zeros});
  return specs;
}

ParamCounts count_params(const ModelConfig& config) {
  return count_specs(model_param_specs(config));
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 3) {
    throw DimensionError("patchify expects [C x H x W], got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t p = patch_size;
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw DimensionError("patchify: image " + shape_str(image.shape()) +
                         " not divisible by patch size " + std::to_string(p));
  }
  const std::size_t gh = h / p, gw = w / p, width = c * p * p;
  std::vector<double> out(gh * gw * width);
  auto src = image.data();
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      double* row = out.data() + (py * gw + px) * width;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            row[(ch * p + dy) * p + dx] = src[(ch * h + py * p + dy) * w + px * p + dx];
    }
  return Tensor({gh * gw, width}, std::move(out));
}

Tensor unpatchify(const Tensor& tokens, std::size_t channels,
                  std::size_t image_size, std::size_t patch_size) {
  const std::size_t p = patch_size, g = image_size / p;
  if (p == 0 || image_size % p != 0 || tokens.rank() != 2 ||
      tokens.dim(0) != g * g || tokens.dim(1) != channels * p * p) {
    throw DimensionError("unpatchify: tokens " + shape_str(tokens.shape()) +
                         " do not match a " + std::to_string(channels) + "x" +
                         std::to_string(image_size) + "^2 image with patch " +
                         std::to_string(p));
  }
  std::vector<double> out(channels * image_size * image_size);
  auto src = tokens.data();
  const std::size_t width = channels * p * p;
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px)
      for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            out[(ch * image_size + py * p + dy) * image_size + px * p + dx] =
                src[(py * g + px) * width + (ch * p + dy) * p + dx];
  return Tensor({channels, image_size, image_size}, std::move(out));
}

Tensor patchify_batch(const Tensor& images, std::size_t patch_size) {
  if (images.rank() != 4) {
    throw DimensionError("expected images [B x C x H x W], got " +
                         shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0);
  const Shape one{images.dim(1), images.dim(2), images.dim(3)};
  const std::size_t per = shape_numel(one);
  std::vector<double> out;
  Shape token_shape;
  for (std::size_t i = 0; i < b; ++i) {
    auto first = images.data().begin() + static_cast<std::ptrdiff_t>(i * per);
    Tensor img(one, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
    auto tokens = patchify(img, patch_size);
    token_shape = tokens.shape();
    out.insert(out.end(), tokens.data().begin(), tokens.data().end());
  }
  if (b == 0) throw DimensionError("empty image batch");
  return Tensor({b, token_shape[0], token_shape[1]}, std::move(out));
}

Tensor token_embed(const Tensor& tokens, const Tensor& w_patch, const Tensor& pos) {
  auto x = matmul(tokens, w_patch);
  return pos.defined() ? add_broadcast(x, pos) : x;
}

Tensor encoder_block_forward(const Tensor& x, const EncoderBlock& block) {
  const auto h = layer_norm(x, block.norm1_gamma, block.norm1_beta);
  const auto qkv = block.embed(h);
  const auto x1 = add(x, multi_head(qkv.q, qkv.k, qkv.v, block.attn_config, block.attn));
  const auto h2 = layer_norm(x1, block.norm2_gamma, block.norm2_beta);
  return add(x1, block.ffn_out(relu(block.ffn_in(h2))));
}

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed), specs_(model_param_specs(config)) {
  for (const auto& s : specs_) registry_.add(s.name, materialize(s, seed), s.group);
  bind();
}

void Model::bind() {
  const auto& r = registry_;
  patch_w_ = r.get("patch.weight");
  if (config_.use_positional) pos_ = r.get("pos");
  blocks_.clear();
  const auto attn = config_.attention_config();
  for (std::size_t i = 0; i < config_.num_encoders; ++i) {
    const auto p = block_prefix(i);
    blocks_.push_back(EncoderBlock{
        r.get(p + ".norm1.gamma"), r.get(p + ".norm1.beta"),
        Embedder(config_.embed, r, p + ".embed", code_prefix(config_, i)), attn,
        bind_attention(attn, r, p + ".attn"), r.get(p + ".norm2.gamma"),
        r.get(p + ".norm2.beta"),
        Linear{r.get(p + ".ffn.0.weight"), r.get(p + ".ffn.0.bias")},
        Linear{r.get(p + ".ffn.1.weight"), r.get(p + ".ffn.1.bias")}});
  }
  norm_gamma_ = r.get("norm.gamma");
  norm_beta_ = r.get("norm.beta");
  head_ = Linear{r.get("head.weight"), r.get("head.bias")};
}

Model Model::clone() const {
  Model copy(config_, seed_);
  for (std::size_t i = 0; i < registry_.size(); ++i) {
    auto src = registry_.entries()[i].tensor.data();
    auto dst = copy.registry_.entries()[i].tensor;
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
  return copy;
}

Tensor Model::forward(const Tensor& images) const {
  const Shape expected{config_.in_channels, config_.image_size, config_.image_size};
  if (images.rank() != 4 || !std::equal(expected.begin(), expected.end(),
                                        images.shape().begin() + 1)) {
    throw DimensionError("model expects images [B x " +
                         std::to_string(config_.in_channels) + " x " +
                         std::to_string(config_.image_size) + " x " +
                         std::to_string(config_.image_size) + "], got " +
                         shape_str(images.shape()));
  }
  auto x = token_embed(patchify_batch(images, config_.patch_size), patch_w_, pos_);
  for (const auto& block : blocks_) x = encoder_block_forward(x, block);
  x = layer_norm(x, norm_gamma_, norm_beta_);
  auto logits = head_(mean_axis(x, 1));
  check_finite(logits, "model forward logits");
  return logits;
}

const CodeBank& Model::codes(std::size_t block) const {
  if (block >= blocks_.size() || !blocks_[block].embed.codes()) {
    throw Error("model has no code bank for block " + std::to_string(block));
  }
  return *blocks_[block].embed.codes();
}

void Model::reinit_group(ParamGroup group, std::uint64_t seed) {
  for (const auto& s : specs_) {
    if (s.group != group) continue;
    auto fresh = materialize(s, seed);
    auto dst = registry_.get(s.name);
    std::copy(fresh.data().begin(), fresh.data().end(), dst.mutable_data().begin());
  }
}

void Model::randomize(std::uint64_t seed, double gain) {
  for (const auto& s : specs_) {
    if (s.group == ParamGroup::Norm) continue;
    Rng rng(mix_seed(seed, s.name));
    const double std = gain / std::sqrt(static_cast<double>(s.shape.front()));
    Tensor t = registry_.get(s.name);
    for (auto& v : t.mutable_data()) v = std * rng.normal();
  }
}

ParamCounts count_params(const Model& model) { return model.params().counts(); }

}  // namespace qkv

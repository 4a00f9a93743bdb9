// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/embed.hpp"

#include <algorithm>
#include <cctype>

#include "qkv/errors.hpp"
#include "qkv/ops.hpp"

namespace qkv {

namespace {

constexpr std::array<const char*, 3> kStreamNames = {"q", "k", "v"};

Tensor run_stack(Tensor h, std::span<const Linear> stack) {
  for (std::size_t l = 0; l < stack.size(); ++l) {
    h = stack[l](h);
    if (l + 1 < stack.size()) h = relu(h);
  }
  return h;
}

// Widths of the linear chain for one stream, input to output.
std::vector<std::size_t> stream_widths(const EmbedConfig& c) {
  switch (c.variant) {
    case Variant::Conventional:
      return {c.d, c.d};
    case Variant::SNE: {
      if (c.layers == 1) return {c.d, c.d};
      std::vector<std::size_t> w{c.d};
      for (int l = 0; l + 1 < c.layers; ++l) w.push_back(c.hidden);
      w.push_back(c.d);
      return w;
    }
    case Variant::PSNE:
      return {c.d, c.hidden, c.d};
    case Variant::FSNE:
      return {c.d + c.code_size, c.hidden, c.d};
  }
  return {};
}

// True if layer `l` is one tensor used by all three streams.
bool layer_shared(Variant v, std::size_t l) {
  return v == Variant::FSNE || (v == Variant::PSNE && l == 1);
}

std::string layer_prefix(const std::string& prefix, Variant v, std::size_t stream,
                         std::size_t l) {
  const std::string owner = layer_shared(v, l) ? "shared" : kStreamNames[stream];
  return prefix + "." + owner + "." + std::to_string(l);
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Conventional: return "conventional";
    case Variant::SNE: return "sne";
    case Variant::PSNE: return "psne";
    case Variant::FSNE: return "fsne";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  std::string key;
  for (char ch : name) {
    if (ch == '-' || ch == '_') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  for (auto v : {Variant::Conventional, Variant::SNE, Variant::PSNE, Variant::FSNE}) {
    if (key == variant_name(v)) return v;
  }
  return std::nullopt;
}

void EmbedConfig::validate() const {
  if (d == 0) throw ConfigError("embed.d must be positive");
  if (hidden == 0) throw ConfigError("embed.hidden must be positive");
  if (layers < 1 || layers > 4) {
    throw ConfigError("embed.layers must lie in [1, 4], got " + std::to_string(layers));
  }
  if (variant == Variant::FSNE && code_size == 0) {
    throw ConfigError("embed.code_size must be positive for fsne");
  }
  if (variant != Variant::FSNE && code_size != 0) {
    throw ConfigError("embed.code_size must be 0 for " +
                      std::string(variant_name(variant)));
  }
  if (variant == Variant::Conventional && hidden != d) {
    throw ConfigError("embed.hidden must equal d for conventional embedding");
  }
}

std::size_t scale_width(ModelScale scale) {
  return scale == ModelScale::Nano ? 128 : 192;
}

EmbedConfig reference_embed_config(ModelScale scale, Variant variant, std::size_t code_size,
                          bool starred) {
  const bool nano = scale == ModelScale::Nano;
  EmbedConfig c;
  c.variant = variant;
  c.d = scale_width(scale);
  c.code_size = 0;
  c.layers = 2;
  switch (variant) {
    case Variant::Conventional:
      c.hidden = c.d;
      break;
    case Variant::SNE:
      c.hidden = nano ? 64 : 96;
      break;
    case Variant::PSNE:
      c.hidden = nano ? 96 : 144;
      break;
    case Variant::FSNE:
      c.code_size = code_size;
      c.hidden = c.d;
      if (starred) {
        if (code_size == 8) {
          c.hidden = nano ? 186 : 282;
        } else if (code_size == 16) {
          c.hidden = nano ? 182 : 276;
        } else {
          throw ConfigError("starred width exists only for code sizes 8 and 16");
        }
      }
      break;
  }
  return c;
}

EmbedParamBreakdown embedding_param_count(const EmbedConfig& config,
                                          std::size_t num_encoders) {
  config.validate();
  const auto widths = stream_widths(config);
  EmbedParamBreakdown out;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t layer = widths[l] * widths[l + 1] +
                              (config.use_bias ? widths[l + 1] : 0);
    out.per_block += layer_shared(config.variant, l) ? layer : 3 * layer;
  }
  if (config.variant == Variant::FSNE) {
    out.codes = 3 * config.code_size * (config.share_codes ? 1 : num_encoders);
  }
  out.total = out.per_block * num_encoders + out.codes;
  return out;
}

Tensor Linear::operator()(const Tensor& x) const {
  auto y = matmul(x, weight);
  return bias.defined() ? add_broadcast(y, bias) : y;
}

const Tensor& CodeBank::operator[](Stream s) const {
  switch (s) {
    case Stream::Q: return q;
    case Stream::K: return k;
    case Stream::V: return v;
  }
  return q;
}

QKV embed_conventional(const Tensor& x, const Linear& wq, const Linear& wk,
                       const Linear& wv) {
  return {wq(x), wk(x), wv(x)};
}

QKV embed_sne(const Tensor& x, std::span<const Linear> q_stack,
              std::span<const Linear> k_stack, std::span<const Linear> v_stack) {
  return {run_stack(x, q_stack), run_stack(x, k_stack), run_stack(x, v_stack)};
}

QKV embed_psne(const Tensor& x, const Linear& q_first, const Linear& k_first,
               const Linear& v_first, const Linear& shared_second) {
  return {shared_second(relu(q_first(x))), shared_second(relu(k_first(x))),
          shared_second(relu(v_first(x)))};
}

QKV embed_fsne(const Tensor& x, const CodeBank& codes, const Linear& shared_first,
               const Linear& shared_second) {
  const std::size_t expected = shared_first.weight.dim(0);
  if (x.shape().back() + codes.size() != expected) {
    throw DimensionError("embed_fsne: token width " +
                         std::to_string(x.shape().back()) + " plus code size " +
                         std::to_string(codes.size()) +
                         " does not match shared layer input " +
                         std::to_string(expected));
  }
  auto stream = [&](const Tensor& code) {
    return shared_second(relu(shared_first(concat_feature(x, code))));
  };
  return {stream(codes.q), stream(codes.k), stream(codes.v)};
}

std::vector<ParamSpec> embed_param_specs(const EmbedConfig& config,
                                         const std::string& prefix,
                                         const std::string& code_prefix) {
  config.validate();
  const auto widths = stream_widths(config);
  std::vector<ParamSpec> specs;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t owners = layer_shared(config.variant, l) ? 1 : 3;
    for (std::size_t s = 0; s < owners; ++s) {
      const auto base = layer_prefix(prefix, config.variant, s, l);
      specs.push_back({base + ".weight", {widths[l], widths[l + 1]},
                       ParamGroup::EmbedQkv, Init::TruncNormal});
      if (config.use_bias) {
        specs.push_back({base + ".bias", {widths[l + 1]}, ParamGroup::EmbedQkv,
                         Init::Zeros});
      }
    }
  }
  if (config.variant == Variant::FSNE) {
    for (const char* s : kStreamNames) {
      specs.push_back({code_prefix + "." + s, {1, config.code_size},
                       ParamGroup::Codes, Init::TruncNormal});
    }
  }
  return specs;
}

Embedder::Embedder(const EmbedConfig& config, const ParamRegistry& registry,
                   const std::string& prefix, const std::string& code_prefix)
    : config_(config) {
  config_.validate();
  const auto widths = stream_widths(config_);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const auto base = layer_prefix(prefix, config_.variant, s, l);
      Linear lin;
      lin.weight = registry.get(base + ".weight");
      if (config_.use_bias) lin.bias = registry.get(base + ".bias");
      stacks_[s].push_back(std::move(lin));
    }
  }
  if (config_.variant == Variant::FSNE) {
    codes_ = CodeBank{registry.get(code_prefix + ".q"), registry.get(code_prefix + ".k"),
                      registry.get(code_prefix + ".v")};
  }
}

QKV Embedder::operator()(const Tensor& x) const {
  switch (config_.variant) {
    case Variant::Conventional:
      return embed_conventional(x, stacks_[0][0], stacks_[1][0], stacks_[2][0]);
    case Variant::SNE:
      return embed_sne(x, stacks_[0], stacks_[1], stacks_[2]);
    case Variant::PSNE:
      return embed_psne(x, stacks_[0][0], stacks_[1][0], stacks_[2][0], stacks_[0][1]);
    case Variant::FSNE:
      return embed_fsne(x, *codes_, stacks_[0][0], stacks_[0][1]);
  }
  throw Error("unknown embedding variant");
}

}  // namespace qkv

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <vector>

#include "qkv/errors.hpp"
#include "qkv/util.hpp"

namespace qkv {

namespace {

using nlohmann::json;

std::string suggestion_suffix(std::string_view word, std::span<const std::string> options) {
  if (auto best = closest_match(word, options)) return " (did you mean '" + *best + "'?)";
  return "";
}

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::vector<std::string> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    for (const auto& [key, _] : j_.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        throw ConfigError("unknown key '" + qualify(key) + "'" +
                          suggestion_suffix(key, allowed));
      }
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::size_t size(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(qualify(key) + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    return size(key, static_cast<std::size_t>(fallback));
  }

  int integer(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(qualify(key) + ": expected an integer");
    return v.get<int>();
  }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(qualify(key) + ": expected a number");
    return v.get<double>();
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(qualify(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, std::string fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(qualify(key) + ": expected a string");
    return v.get<std::string>();
  }

  const json& at(const std::string& key) const { return j_.at(key); }
  std::string qualify(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
};

std::size_t default_hidden(Variant v, std::size_t d) {
  switch (v) {
    case Variant::SNE: return std::max<std::size_t>(1, d / 2);
    case Variant::PSNE: return std::max<std::size_t>(1, 3 * d / 4);
    default: return d;
  }
}

template <typename F>
auto with_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

TrainConfig train_config_from_json(const json& j) {
  ObjectReader r(j, "train",
                 {"epochs", "batch_size", "learning_rate", "weight_decay", "optimizer",
                  "seed", "lr_schedule", "decay_codes", "beta1", "beta2", "adam_eps",
                  "target_train_acc"});
  TrainConfig t;
  t.epochs = r.size("epochs", t.epochs);
  t.batch_size = r.size("batch_size", t.batch_size);
  t.learning_rate = r.number("learning_rate", t.learning_rate);
  t.weight_decay = r.number("weight_decay", t.weight_decay);
  const auto opt = r.string("optimizer", std::string(optimizer_name(t.optimizer)));
  if (opt == "sgd") {
    t.optimizer = OptimizerKind::SGD;
  } else if (opt == "adamw") {
    t.optimizer = OptimizerKind::AdamW;
  } else {
    throw ConfigError("train.optimizer: unknown optimizer '" + opt + "' (expected sgd or adamw)");
  }
  t.seed = r.u64("seed", t.seed);
  const auto sched = r.string("lr_schedule", std::string(schedule_name(t.lr_schedule)));
  if (sched == "constant") {
    t.lr_schedule = LrSchedule::Constant;
  } else if (sched == "cosine") {
    t.lr_schedule = LrSchedule::Cosine;
  } else {
    throw ConfigError("train.lr_schedule: unknown schedule '" + sched +
                      "' (expected constant or cosine)");
  }
  t.decay_codes = r.boolean("decay_codes", t.decay_codes);
  t.beta1 = r.number("beta1", t.beta1);
  t.beta2 = r.number("beta2", t.beta2);
  t.adam_eps = r.number("adam_eps", t.adam_eps);
  if (r.has("target_train_acc") && !r.at("target_train_acc").is_null()) {
    t.target_train_acc = r.number("target_train_acc", 0.0);
  }
  t.validate();
  return t;
}

}  // namespace

DataSource data_source_from_json(const json& j, const ModelConfig& model) {
  ObjectReader r(j, "data",
                 {"source", "seed", "num_samples", "num_classes", "image_size", "noise",
                  "images", "labels", "split_seed"});
  DataSource s;
  const auto kind = r.string("source", "synthetic");
  if (kind == "synthetic") {
    for (const char* key : {"images", "labels", "split_seed"}) {
      if (r.has(key)) throw ConfigError(r.qualify(key) + ": only valid for idx sources");
    }
    s.kind = DataSource::Kind::Synthetic;
    s.synthetic.seed = r.u64("seed", 0);
    s.synthetic.num_samples = r.size("num_samples", s.synthetic.num_samples);
    s.synthetic.num_classes = r.size("num_classes", model.num_classes);
    s.synthetic.image_size = r.size("image_size", model.image_size);
    s.synthetic.noise = r.number("noise", s.synthetic.noise);
  } else if (kind == "idx") {
    for (const char* key : {"seed", "num_samples", "num_classes", "image_size", "noise"}) {
      if (r.has(key)) throw ConfigError(r.qualify(key) + ": only valid for synthetic sources");
    }
    s.kind = DataSource::Kind::Idx;
    if (!r.has("images") || !r.has("labels")) {
      throw ConfigError("data: idx source needs 'images' and 'labels' paths");
    }
    s.images_path = r.string("images", "");
    s.labels_path = r.string("labels", "");
    s.split_seed = r.u64("split_seed", 0);
  } else {
    throw ConfigError("data.source: unknown source '" + kind + "' (expected synthetic or idx)");
  }
  return s;
}

Dataset load_data(const DataSource& source) {
  if (source.kind == DataSource::Kind::Synthetic) return gen_synthetic(source.synthetic);
  return load_idx(source.images_path, source.labels_path, source.split_seed);
}

std::optional<ModelScale> parse_scale(std::string_view name) {
  if (name == "nano") return ModelScale::Nano;
  if (name == "tiny") return ModelScale::Tiny;
  return std::nullopt;
}

void apply_preset(ModelConfig& config, std::string_view preset) {
  static const std::vector<std::string> kNames = [] {
    std::vector<std::string> names;
    for (const char* s : {"nano", "tiny"})
      for (const char* v : {"conventional", "sne", "psne", "fsne", "fsne-8star", "fsne-16star"})
        names.push_back(std::string(s) + "-" + v);
    return names;
  }();
  if (std::find(kNames.begin(), kNames.end(), preset) == kNames.end()) {
    throw ConfigError("unknown preset '" + std::string(preset) + "'" +
                      suggestion_suffix(preset, kNames));
  }
  const auto dash = preset.find('-');
  const auto scale = *parse_scale(preset.substr(0, dash));
  const auto rest = preset.substr(dash + 1);
  EmbedConfig embed;
  if (rest == "fsne-8star") {
    embed = reference_embed_config(scale, Variant::FSNE, 8, true);
  } else if (rest == "fsne-16star") {
    embed = reference_embed_config(scale, Variant::FSNE, 16, true);
  } else {
    embed = reference_embed_config(scale, *parse_variant(rest), 8, false);
  }
  embed.share_codes = config.embed.share_codes;
  config.d = embed.d;
  config.num_encoders = 12;
  config.embed = embed;
}

ModelConfig with_full_dims(const ModelConfig& config, ModelScale scale) {
  ModelConfig out = config;
  const auto& e = config.embed;
  out.embed = reference_embed_config(scale, e.variant, e.variant == Variant::FSNE ? e.code_size : 8, false);
  out.embed.layers = e.layers;
  out.embed.use_bias = e.use_bias;
  out.embed.share_codes = e.share_codes;
  out.d = out.embed.d;
  out.num_encoders = 12;
  out.heads = 4;
  return out;
}

json to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},
          {"patch_size", c.patch_size},
          {"in_channels", c.in_channels},
          {"d", c.d},
          {"num_encoders", c.num_encoders},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"num_classes", c.num_classes},
          {"use_positional", c.use_positional},
          {"attention", std::string(attention_name(c.attention))},
          {"embed",
           {{"variant", std::string(variant_name(c.embed.variant))},
            {"hidden", c.embed.hidden},
            {"code_size", c.embed.code_size},
            {"layers", c.embed.layers},
            {"use_bias", c.embed.use_bias},
            {"share_codes", c.embed.share_codes}}}};
}

json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"optimizer", std::string(optimizer_name(t.optimizer))},
          {"seed", t.seed},
          {"lr_schedule", std::string(schedule_name(t.lr_schedule))},
          {"decay_codes", t.decay_codes},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"target_train_acc", t.target_train_acc ? json(*t.target_train_acc) : json(nullptr)}};
}

json to_json(const DataSource& s) {
  if (s.kind == DataSource::Kind::Idx) {
    return {{"source", "idx"},
            {"images", s.images_path},
            {"labels", s.labels_path},
            {"split_seed", s.split_seed}};
  }
  return {{"source", "synthetic"},
          {"seed", s.synthetic.seed},
          {"num_samples", s.synthetic.num_samples},
          {"num_classes", s.synthetic.num_classes},
          {"image_size", s.synthetic.image_size},
          {"noise", s.synthetic.noise}};
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"data", to_json(c.data)},
          {"output_dir", c.output_dir}};
}

ModelConfig model_config_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path,
                 {"preset", "image_size", "patch_size", "in_channels", "d", "num_encoders",
                  "heads", "mlp_ratio", "num_classes", "use_positional", "attention",
                  "embed"});
  ModelConfig c;
  const bool preset = r.has("preset");
  if (preset) with_path(r.qualify("preset"), [&] { apply_preset(c, r.string("preset", "")); return 0; });

  c.image_size = r.size("image_size", c.image_size);
  c.patch_size = r.size("patch_size", c.patch_size);
  c.in_channels = r.size("in_channels", c.in_channels);
  c.d = r.size("d", c.d);
  c.num_encoders = r.size("num_encoders", c.num_encoders);
  c.heads = r.size("heads", c.heads);
  c.mlp_ratio = r.size("mlp_ratio", c.mlp_ratio);
  c.num_classes = r.size("num_classes", c.num_classes);
  c.use_positional = r.boolean("use_positional", c.use_positional);
  const auto attn = r.string("attention", std::string(attention_name(c.attention)));
  if (auto kind = parse_attention(attn)) {
    c.attention = *kind;
  } else {
    throw ConfigError(r.qualify("attention") + ": unknown attention '" + attn +
                      "' (expected xca or sa)");
  }

  bool keep_preset_dims = preset && !r.has("d");
  if (r.has("embed")) {
    ObjectReader e(r.at("embed"), r.qualify("embed"),
                   {"variant", "hidden", "code_size", "layers", "use_bias", "share_codes"});
    if (e.has("variant")) {
      const auto name = e.string("variant", "");
      const auto v = parse_variant(name);
      if (!v) {
        static const std::vector<std::string> kVariants = {"conventional", "sne", "psne", "fsne"};
        throw ConfigError(e.qualify("variant") + ": unknown variant '" + name + "'" +
                          suggestion_suffix(name, kVariants));
      }
      if (*v != c.embed.variant) keep_preset_dims = false;
      c.embed.variant = *v;
    }
    c.embed.hidden = e.size("hidden", keep_preset_dims ? c.embed.hidden
                                                       : default_hidden(c.embed.variant, c.d));
    const std::size_t default_code =
        c.embed.variant != Variant::FSNE ? 0
        : (keep_preset_dims && c.embed.code_size > 0) ? c.embed.code_size
                                                      : 8;
    c.embed.code_size = e.size("code_size", default_code);
    c.embed.layers = e.integer("layers", c.embed.layers);
    c.embed.use_bias = e.boolean("use_bias", c.embed.use_bias);
    c.embed.share_codes = e.boolean("share_codes", c.embed.share_codes);
  } else if (!keep_preset_dims) {
    c.embed.hidden = default_hidden(c.embed.variant, c.d);
  }
  c.embed.d = c.d;
  with_path(path, [&] { c.validate(); return 0; });
  return c;
}

RunConfig run_config_from_json(const json& j) {
  ObjectReader r(j, "", {"model", "train", "data", "output_dir"});
  RunConfig c;
  c.model = model_config_from_json(r.has("model") ? r.at("model") : json::object());
  c.train = train_config_from_json(r.has("train") ? r.at("train") : json::object());
  c.data = data_source_from_json(r.has("data") ? r.at("data") : json::object(), c.model);
  c.output_dir = r.string("output_dir", c.output_dir);
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_digest(const RunConfig& config) {
  return hex_digest(to_json(config).dump());
}

std::string model_config_digest(const ModelConfig& config) {
  return hex_digest(to_json(config).dump());
}

}  // namespace qkv

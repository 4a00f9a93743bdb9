// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "qkv/data.hpp"
#include "qkv/model.hpp"
#include "qkv/train.hpp"

namespace qkv {

struct DataSource {
  enum class Kind { Synthetic, Idx };
  Kind kind = Kind::Synthetic;
  SyntheticSpec synthetic;
  std::string images_path;
  std::string labels_path;
  std::uint64_t split_seed = 0;
};

Dataset load_data(const DataSource& source);

/// Everything a CLI run needs, after defaults and presets are resolved.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataSource data;
  std::string output_dir = "runs";
};

/// Reference-scale presets: "<nano|tiny>-<conventional|sne|psne|fsne|fsne-8star|
/// fsne-16star>". A preset sets d, twelve encoders and the embedding dims.
void apply_preset(ModelConfig& config, std::string_view preset);

std::optional<ModelScale> parse_scale(std::string_view name);

/// Same variant at reference dims: d and embedding widths of the given scale,
/// twelve encoders. FSNE keeps its code size and sharing mode.
ModelConfig with_full_dims(const ModelConfig& config, ModelScale scale);

// Canonical JSON forms. Every field is written, so parsing the output
// reproduces the input exactly.
nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const DataSource& source);
nlohmann::json to_json(const RunConfig& config);

/// Strict parsing: unknown keys, wrong types and invariant violations raise
/// ConfigError with a path-qualified message (and a spelling suggestion for
/// unknown keys). `path` prefixes messages.
ModelConfig model_config_from_json(const nlohmann::json& j,
                                   const std::string& path = "model");
RunConfig run_config_from_json(const nlohmann::json& j);

/// A `data` section. Synthetic image size and class count default to the
/// model's.
DataSource data_source_from_json(const nlohmann::json& j, const ModelConfig& model);

RunConfig parse_config(const std::filesystem::path& path);

std::string config_digest(const RunConfig& config);
std::string model_config_digest(const ModelConfig& config);

}  // namespace qkv

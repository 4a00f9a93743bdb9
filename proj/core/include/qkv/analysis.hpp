// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qkv/attention.hpp"
#include "qkv/data.hpp"
#include "qkv/model.hpp"
#include "qkv/train.hpp"

namespace qkv {

/// One swept setting, aggregated over trials.
struct SweepRow {
  std::size_t value = 0;  ///< L, c, or 1/0 for shared/unshared codes
  std::size_t embed_params = 0;  ///< embedding_param_count(...).total
  std::size_t model_params = 0;
  double val_acc_mean = 0.0;
  double val_acc_std = 0.0;
  double train_acc_mean = 0.0;
  double train_acc_std = 0.0;
  std::vector<std::uint64_t> seeds;
};

struct SweepTable {
  std::string name;    ///< "layers", "code_size" or "sharing"
  std::string column;  ///< header of the value column
  std::vector<SweepRow> rows;
  std::string config_digest;
};

struct SweepOptions {
  std::size_t trials = 3;
  /// Worker threads; 0 means thread_count().
  unsigned threads = 0;
};

/// Trial t of every cell trains with seed train.seed + t on `data`.
/// Requires an SNE base config.
SweepTable sweep_layers(const ModelConfig& base, const TrainConfig& train, const Dataset& data,
                        std::span<const int> layers, const SweepOptions& options = {});

/// Requires an FSNE base config; hidden stays fixed while c varies.
SweepTable sweep_code_size(const ModelConfig& base, const TrainConfig& train,
                           const Dataset& data, std::span<const std::size_t> code_sizes,
                           const SweepOptions& options = {});

/// Rows for shared (value 1) then unshared (value 0) codes. Requires FSNE.
SweepTable compare_sharing(const ModelConfig& base, const TrainConfig& train,
                           const Dataset& data, const SweepOptions& options = {});

/// Extra parameters of per-encoder codes over one shared bank.
std::size_t sharing_param_delta(const ModelConfig& config);

struct BenchRow {
  AttentionKind kind = AttentionKind::XCA;
  std::size_t n = 0;
  double median_ns = 0.0;
  std::size_t attn_bytes = 0;  ///< size of all heads' attention matrices
};

/// Median wall time of the attention core (no projections) for SA and XCA
/// on identical random [N x d] inputs. Rows are SA over n_list, then XCA.
/// Each sample times enough calls to last 2 ms; repeats are interleaved
/// across all cells.
/// n_list must be strictly ascending and repeats at least 5.
std::vector<BenchRow> bench_attention(std::span<const std::size_t> n_list, std::size_t d,
                                      std::size_t repeats, std::size_t heads = 1,
                                      std::uint64_t seed = 0);

nlohmann::json sweep_to_json(const SweepTable& table);
void write_sweep_csv(const SweepTable& table, std::ostream& out);

nlohmann::json bench_to_json(std::span<const BenchRow> rows, std::size_t d, std::size_t heads,
                             std::size_t repeats, std::uint64_t seed);
void write_bench_csv(std::span<const BenchRow> rows, std::ostream& out, std::size_t d,
                     std::size_t heads, std::size_t repeats, std::uint64_t seed);

}  // namespace qkv

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <ostream>
#include <thread>

#include "qkv/config.hpp"
#include "qkv/errors.hpp"
#include "qkv/ops.hpp"
#include "qkv/random.hpp"
#include "qkv/util.hpp"

namespace qkv {

namespace {

struct Cell {
  ModelConfig model;
  std::size_t row = 0;
  std::uint64_t seed = 0;
};

struct CellResult {
  double train_acc = 0.0;
  double val_acc = 0.0;
};

std::vector<CellResult> run_cells(const std::vector<Cell>& cells, const TrainConfig& train,
                                  const Dataset& data, unsigned threads) {
  std::vector<CellResult> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        TrainConfig cfg = train;
        cfg.seed = cells[i].seed;
        Model model(cells[i].model, cells[i].seed);
        const auto report = fit(model, data, cfg);
        results[i] = {report.epochs.back().train_acc, report.epochs.back().val_acc};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads ? threads : thread_count(),
                                                     static_cast<unsigned>(cells.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

SweepTable run_sweep(std::string name, std::string column, const std::vector<ModelConfig>& configs,
                     const std::vector<std::size_t>& values, const TrainConfig& train,
                     const Dataset& data, const SweepOptions& options) {
  if (options.trials < 1) throw ConfigError("sweep needs at least one trial");
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < configs.size(); ++r) {
    configs[r].validate();
    for (std::size_t t = 0; t < options.trials; ++t) cells.push_back({configs[r], r, train.seed + t});
  }
  const auto results = run_cells(cells, train, data, options.threads);

  SweepTable table;
  table.name = std::move(name);
  table.column = std::move(column);
  nlohmann::json digest_input = nlohmann::json::array();
  for (std::size_t r = 0; r < configs.size(); ++r) {
    SweepRow row;
    row.value = values[r];
    row.embed_params = embedding_param_count(configs[r].embed, configs[r].num_encoders).total;
    row.model_params = count_params(configs[r]).total;
    std::vector<double> val, tr;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].row != r) continue;
      val.push_back(results[i].val_acc);
      tr.push_back(results[i].train_acc);
      row.seeds.push_back(cells[i].seed);
    }
    std::tie(row.val_acc_mean, row.val_acc_std) = mean_std(val);
    std::tie(row.train_acc_mean, row.train_acc_std) = mean_std(tr);
    table.rows.push_back(std::move(row));
    digest_input.push_back(to_json(configs[r]));
  }
  digest_input.push_back({{"epochs", train.epochs}, {"seed", train.seed},
                          {"trials", options.trials}, {"learning_rate", train.learning_rate}});
  table.config_digest = hex_digest(digest_input.dump());
  return table;
}

void require_variant(const ModelConfig& c, Variant v, const char* op) {
  if (c.embed.variant != v) {
    throw ConfigError(std::string(op) + " requires a " + std::string(variant_name(v)) +
                      " base config, got " + std::string(variant_name(c.embed.variant)));
  }
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const auto n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

Tensor random_tensor(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

std::string seeds_str(std::span<const std::uint64_t> seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(seeds[i]);
  }
  return s;
}

}  // namespace

SweepTable sweep_layers(const ModelConfig& base, const TrainConfig& train, const Dataset& data,
                        std::span<const int> layers, const SweepOptions& options) {
  require_variant(base, Variant::SNE, "sweep_layers");
  std::vector<ModelConfig> configs;
  std::vector<std::size_t> values;
  for (int l : layers) {
    ModelConfig c = base;
    c.embed.layers = l;
    configs.push_back(c);
    values.push_back(static_cast<std::size_t>(l));
  }
  return run_sweep("layers", "L", configs, values, train, data, options);
}

SweepTable sweep_code_size(const ModelConfig& base, const TrainConfig& train,
                           const Dataset& data, std::span<const std::size_t> code_sizes,
                           const SweepOptions& options) {
  require_variant(base, Variant::FSNE, "sweep_code_size");
  std::vector<ModelConfig> configs;
  std::vector<std::size_t> values(code_sizes.begin(), code_sizes.end());
  for (auto c : code_sizes) {
    ModelConfig m = base;
    m.embed.code_size = c;
    configs.push_back(m);
  }
  return run_sweep("code_size", "c", configs, values, train, data, options);
}

SweepTable compare_sharing(const ModelConfig& base, const TrainConfig& train,
                           const Dataset& data, const SweepOptions& options) {
  require_variant(base, Variant::FSNE, "compare_sharing");
  ModelConfig shared = base, unshared = base;
  shared.embed.share_codes = true;
  unshared.embed.share_codes = false;
  return run_sweep("sharing", "shared", {shared, unshared}, {1, 0}, train, data, options);
}

std::size_t sharing_param_delta(const ModelConfig& config) {
  ModelConfig shared = config, unshared = config;
  shared.embed.share_codes = true;
  unshared.embed.share_codes = false;
  return count_params(unshared).total - count_params(shared).total;
}

std::vector<BenchRow> bench_attention(std::span<const std::size_t> n_list, std::size_t d,
                                      std::size_t repeats, std::size_t heads,
                                      std::uint64_t seed) {
  if (repeats < 5) throw ConfigError("bench_attention: repeats must be at least 5");
  if (n_list.empty() || n_list.front() == 0 ||
      std::adjacent_find(n_list.begin(), n_list.end(), std::greater_equal<>()) != n_list.end()) {
    throw ConfigError("bench_attention: N values must be positive and ascending");
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("bench_attention: d " + std::to_string(d) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  NoGradGuard no_grad;

  struct Cell {
    AttentionKind kind;
    std::size_t n;
    std::vector<Tensor> q, k, v;
    std::size_t calls = 1;
    std::vector<double> times;
  };
  std::vector<Cell> cells;
  for (AttentionKind kind : {AttentionKind::SA, AttentionKind::XCA}) {
    for (std::size_t n : n_list) {
      Rng rng(mix_seed(seed, n));
      const Tensor q = random_tensor(rng, {n, d});
      const Tensor k = random_tensor(rng, {n, d});
      const Tensor v = random_tensor(rng, {n, d});
      Cell c{kind, n, {}, {}, {}, 1, {}};
      for (std::size_t h = 0; h < heads; ++h) {
        c.q.push_back(slice_last(q, h * dh, (h + 1) * dh));
        c.k.push_back(slice_last(k, h * dh, (h + 1) * dh));
        c.v.push_back(slice_last(v, h * dh, (h + 1) * dh));
      }
      cells.push_back(std::move(c));
    }
  }

  double sink = 0.0;
  auto run = [&sink](const Cell& c) {
    for (std::size_t h = 0; h < c.q.size(); ++h) {
      const Tensor out = c.kind == AttentionKind::SA ? self_attention(c.q[h], c.k[h], c.v[h])
                                                     : xca(c.q[h], c.k[h], c.v[h], 1.0);
      sink += out.data()[0];
    }
  };
  auto time_calls = [&run](const Cell& c, std::size_t calls) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < calls; ++i) run(c);
    return std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - start)
        .count();
  };
  // Warm-up, then enough calls per sample that one sample lasts >= 2 ms.
  constexpr double kMinSampleNs = 2e6;
  for (auto& c : cells) {
    const double once = std::max(time_calls(c, 1), 1.0);
    c.calls = static_cast<std::size_t>(std::ceil(kMinSampleNs / once));
  }
  // Repeats are interleaved across cells so load drift hits every cell alike.
  for (std::size_t r = 0; r < repeats; ++r) {
    for (auto& c : cells) c.times.push_back(time_calls(c, c.calls) / static_cast<double>(c.calls));
  }
  if (!std::isfinite(sink)) throw NumericError("bench_attention: non-finite output");

  std::vector<BenchRow> rows;
  for (const auto& c : cells) {
    const std::size_t side = c.kind == AttentionKind::SA ? c.n : dh;
    rows.push_back({c.kind, c.n, median(c.times), heads * side * side * sizeof(double)});
  }
  return rows;
}

nlohmann::json sweep_to_json(const SweepTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::uint64_t> all_seeds;
  for (const auto& r : table.rows) {
    rows.push_back({{table.column, r.value},
                    {"embed_params", r.embed_params},
                    {"model_params", r.model_params},
                    {"val_acc_mean", r.val_acc_mean},
                    {"val_acc_std", r.val_acc_std},
                    {"train_acc_mean", r.train_acc_mean},
                    {"train_acc_std", r.train_acc_std},
                    {"seeds", r.seeds}});
    for (auto s : r.seeds)
      if (std::find(all_seeds.begin(), all_seeds.end(), s) == all_seeds.end()) all_seeds.push_back(s);
  }
  return {{"metadata",
           {{"config_digest", table.config_digest},
            {"seeds", all_seeds},
            {"tool_version", std::string(version())}}},
          {"sweep", table.name},
          {"rows", rows}};
}

void write_sweep_csv(const SweepTable& table, std::ostream& out) {
  std::vector<std::uint64_t> seeds;
  if (!table.rows.empty()) seeds = table.rows.front().seeds;
  out << "# sweep=" << table.name << "\n";
  out << "# config_digest=" << table.config_digest << "\n";
  out << "# seeds=" << seeds_str(seeds) << "\n";
  out << "# tool_version=" << version() << "\n";
  out << table.column
      << ",embed_params,model_params,val_acc_mean,val_acc_std,train_acc_mean,train_acc_std\n";
  for (const auto& r : table.rows) {
    out << r.value << ',' << r.embed_params << ',' << r.model_params << ',' << r.val_acc_mean
        << ',' << r.val_acc_std << ',' << r.train_acc_mean << ',' << r.train_acc_std << "\n";
  }
}

nlohmann::json bench_to_json(std::span<const BenchRow> rows, std::size_t d, std::size_t heads,
                             std::size_t repeats, std::uint64_t seed) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"kind", std::string(attention_name(r.kind))},
                   {"n", r.n},
                   {"median_ns", r.median_ns},
                   {"attn_bytes", r.attn_bytes}});
  }
  return {{"metadata",
           {{"d", d},
            {"heads", heads},
            {"repeats", repeats},
            {"seeds", {seed}},
            {"tool_version", std::string(version())}}},
          {"rows", out}};
}

void write_bench_csv(std::span<const BenchRow> rows, std::ostream& out, std::size_t d,
                     std::size_t heads, std::size_t repeats, std::uint64_t seed) {
  out << "# d=" << d << " heads=" << heads << " repeats=" << repeats << "\n";
  out << "# seeds=" << seed << "\n";
  out << "# tool_version=" << version() << "\n";
  out << "kind,n,median_ns,attn_bytes\n";
  for (const auto& r : rows) {
    out << attention_name(r.kind) << ',' << r.n << ',' << r.median_ns << ',' << r.attn_bytes
        << "\n";
  }
}

}  // namespace qkv

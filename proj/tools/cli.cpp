// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qkv/analysis.hpp"
#include "qkv/checkpoint.hpp"
#include "qkv/diagnostics.hpp"
#include "qkv/errors.hpp"
#include "qkv/ops.hpp"
#include "qkv/train.hpp"
#include "qkv/util.hpp"

namespace qkv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kSubcommands = {"train",        "eval",          "count-params",
                                               "grad-check",   "analyze-codes", "sweep",
                                               "bench-attention"};

std::string with_commas(std::size_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

json matrix_json(const Matrix3& m) {
  json out = json::array();
  for (const auto& row : m) out.push_back(row);
  return out;
}

json diagnostics_json(const CodeDiagnostics& d) {
  return {{"correlation", matrix_json(d.correlation)},
          {"norms", {{"C_q", d.norms[0]}, {"C_k", d.norms[1]}, {"C_v", d.norms[2]}}},
          {"source_digest", d.source_digest}};
}

void print_diagnostics(const CodeDiagnostics& d, std::ostream& out) {
  static const char* kNames[3] = {"C_q", "C_k", "C_v"};
  out << "code correlation (l2-normalized dot products):\n";
  out << "        C_q        C_k        C_v\n";
  for (std::size_t i = 0; i < 3; ++i) {
    out << kNames[i];
    for (double v : d.correlation[i]) out << ' ' << std::setw(10) << std::fixed << std::setprecision(6) << v;
    out << '\n';
  }
  out << "code norms:";
  for (std::size_t i = 0; i < 3; ++i) out << ' ' << kNames[i] << '=' << d.norms[i];
  out << '\n' << std::defaultfloat;
}

Batch first_train_batch(const Dataset& data, std::size_t n) {
  if (data.train_idx.empty()) throw Error("dataset has no training samples");
  std::vector<std::size_t> idx(data.train_idx.begin(),
                               data.train_idx.begin() +
                                   static_cast<std::ptrdiff_t>(std::min(n, data.train_idx.size())));
  return {data.images(idx), data.labels_of(idx)};
}

// --- subcommands -----------------------------------------------------------

int run_train(const std::string& config_path, const std::optional<std::string>& out_dir,
              bool quiet, std::ostream& out) {
  const RunConfig config = parse_config(config_path);
  const std::string digest = config_digest(config);
  const fs::path dir = out_dir ? fs::path(*out_dir) : fs::path(config.output_dir);
  const Dataset data = load_data(config.data);
  Model model(config.model, config.train.seed);

  write_json(dir / ("config_" + digest + ".json"), to_json(config));
  FitOptions options;
  options.checkpoint_path = dir / ("checkpoint_" + digest + ".bin");
  options.config_digest = digest;
  if (!quiet) {
    options.on_epoch = [&out](const EpochRecord& r) {
      out << "epoch " << r.epoch << " loss " << r.loss << " train_acc " << r.train_acc
          << " val_acc " << r.val_acc << " lr " << r.lr << '\n';
    };
  }
  const RunReport report = fit(model, data, config.train, options);
  write_json(dir / ("train_" + digest + ".json"), report_to_json(report));
  std::ostringstream csv;
  write_report_csv(report, csv);
  write_text(dir / ("train_" + digest + ".csv"), csv.str());

  const auto& last = report.epochs.back();
  out << "config digest " << digest << '\n';
  out << "epochs " << report.epochs.size() << " final train_acc " << last.train_acc
      << " val_acc " << last.val_acc << " best val_acc " << report.best_val_acc << " (epoch "
      << report.best_epoch << ")\n";
  if (report.codes) print_diagnostics(*report.codes, out);
  out << "outputs written to " << dir.string() << '\n';
  return kExitOk;
}

int run_eval(const std::string& checkpoint, const std::string& data_path,
             const std::string& out_dir, std::ostream& out) {
  const Model model = load_checkpoint(checkpoint);
  const std::string digest = checkpoint_digest(checkpoint);
  const DataSource source = data_source_from_json(read_json(data_path), model.config());
  const Dataset data = load_data(source);
  const auto all = data.all_indices();
  const EvalResult val = evaluate(model, data, data.val_idx);
  const EvalResult full = evaluate(model, data, all);
  const std::string data_digest = hex_digest(to_json(source).dump());

  write_json(fs::path(out_dir) / ("eval_" + digest + "_" + data_digest + ".json"),
             {{"metadata",
               {{"checkpoint_digest", digest},
                {"data_digest", data_digest},
                {"seed", model.seed()},
                {"tool_version", std::string(version())}}},
              {"val", {{"loss", val.loss}, {"accuracy", val.accuracy}, {"count", val.count}}},
              {"all", {{"loss", full.loss}, {"accuracy", full.accuracy}, {"count", full.count}}}});
  out << "checkpoint " << digest << '\n';
  out << "val   loss " << val.loss << " accuracy " << val.accuracy << " (" << val.count << ")\n";
  out << "all   loss " << full.loss << " accuracy " << full.accuracy << " (" << full.count
      << ")\n";
  return kExitOk;
}

int run_count(const std::string& config_path, const std::optional<std::string>& full_dims,
              const std::optional<std::string>& out_dir, std::ostream& out) {
  const RunConfig config = parse_config(config_path);
  ModelConfig model = config.model;
  if (full_dims) {
    const auto scale = parse_scale(*full_dims);
    if (!scale) throw UsageError("--full-dims expects nano or tiny, got '" + *full_dims + "'");
    model = with_full_dims(model, *scale);
  }
  const ParamCounts counts = count_params(model);
  const auto embed = embedding_param_count(model.embed, model.num_encoders);
  const std::string digest = model_config_digest(model);

  json groups = json::object();
  out << std::left << std::setw(12) << "group" << std::right << std::setw(14) << "params" << '\n';
  for (auto g : kAllGroups) {
    groups[std::string(group_name(g))] = counts[g];
    out << std::left << std::setw(12) << group_name(g) << std::right << std::setw(14)
        << with_commas(counts[g]) << '\n';
  }
  out << std::left << std::setw(12) << "total" << std::right << std::setw(14)
      << with_commas(counts.total) << '\n';
  out << "embedding per block " << with_commas(embed.per_block) << ", codes "
      << with_commas(embed.codes) << ", all encoders " << with_commas(embed.total) << '\n';

  const fs::path dir = out_dir ? fs::path(*out_dir) : fs::path(config.output_dir);
  write_json(dir / ("count_" + digest + ".json"),
             {{"metadata", {{"config_digest", digest}, {"tool_version", std::string(version())}}},
              {"model", to_json(model)},
              {"groups", groups},
              {"total", counts.total},
              {"embedding",
               {{"per_block", embed.per_block}, {"codes", embed.codes}, {"total", embed.total}}}});
  return kExitOk;
}

int run_grad_check(const std::string& config_path, double eps, std::size_t samples,
                   const std::string& point_name, const std::optional<std::string>& out_dir,
                   std::ostream& out) {
  ProbePoint point = ProbePoint::Generic;
  if (point_name == "init") {
    point = ProbePoint::Init;
  } else if (point_name != "generic") {
    throw UsageError("--point expects generic or init, got '" + point_name + "'");
  }
  const RunConfig config = parse_config(config_path);
  const std::string digest = config_digest(config);
  GradCheckOptions options;
  options.eps = eps;
  options.samples_per_tensor = samples;
  options.seed = config.train.seed;
  const GradCheckResult r = model_grad_check(config, options, point);
  const bool pass = r.max_relative_error < kGradCheckTolerance;

  const fs::path dir = out_dir ? fs::path(*out_dir) : fs::path(config.output_dir);
  write_json(dir / ("gradcheck_" + digest + ".json"),
             {{"metadata",
               {{"config_digest", digest},
                {"seed", config.train.seed},
                {"tool_version", std::string(version())}}},
              {"eps", eps},
              {"point", point_name},
              {"max_relative_error", r.max_relative_error},
              {"worst_param", r.worst_param},
              {"worst_index", r.worst_index},
              {"worst_autodiff", r.worst_autodiff},
              {"worst_numeric", r.worst_numeric},
              {"elements_checked", r.elements_checked},
              {"kinks_skipped", r.kinks_skipped},
              {"tolerance", kGradCheckTolerance},
              {"pass", pass}});
  out << "variant " << variant_name(config.model.embed.variant) << ", " << r.elements_checked
      << " elements checked, " << r.kinks_skipped << " skipped at relu kinks\n";
  out << "max relative error " << std::scientific << r.max_relative_error << std::defaultfloat
      << " at " << r.worst_param << '[' << r.worst_index << "] (autodiff " << r.worst_autodiff
      << ", numeric " << r.worst_numeric << ")\n";
  out << (pass ? "PASS" : "FAIL") << " (tolerance " << kGradCheckTolerance << ")\n";
  return pass ? kExitOk : kExitRuntime;
}

int run_analyze(const std::string& checkpoint, std::size_t block, const std::string& out_dir,
                std::ostream& out) {
  const Model model = load_checkpoint(checkpoint);
  const std::string digest = checkpoint_digest(checkpoint);
  const CodeDiagnostics d = code_diagnostics(model.codes(block), digest);
  print_diagnostics(d, out);

  const std::string stem = "codes_" + digest + (block ? "_block" + std::to_string(block) : "");
  json j = diagnostics_json(d);
  j["metadata"] = {{"checkpoint_digest", digest},
                   {"seed", model.seed()},
                   {"block", block},
                   {"tool_version", std::string(version())}};
  write_json(fs::path(out_dir) / (stem + ".json"), j);

  std::ostringstream csv;
  csv << "# checkpoint_digest=" << digest << "\n# seed=" << model.seed()
      << "\n# tool_version=" << version() << "\ncode,norm,corr_q,corr_k,corr_v\n";
  static const char* kNames[3] = {"C_q", "C_k", "C_v"};
  csv << std::setprecision(17);
  for (std::size_t i = 0; i < 3; ++i) {
    csv << kNames[i] << ',' << d.norms[i];
    for (double v : d.correlation[i]) csv << ',' << v;
    csv << '\n';
  }
  write_text(fs::path(out_dir) / (stem + ".csv"), csv.str());
  return kExitOk;
}

int run_sweep(const std::string& kind, const std::string& config_path, std::size_t trials,
              const std::vector<std::size_t>& values, const std::optional<std::string>& out_dir,
              std::ostream& out) {
  static const std::vector<std::string> kKinds = {"layers", "code-size", "sharing"};
  if (std::find(kKinds.begin(), kKinds.end(), kind) == kKinds.end()) {
    std::string msg = "unknown sweep '" + kind + "'";
    if (auto s = closest_match(kind, kKinds)) msg += " (did you mean '" + *s + "'?)";
    throw UsageError(msg + "; expected layers, code-size or sharing");
  }
  if (kind == "sharing" && !values.empty()) throw UsageError("sweep sharing takes no --values");
  const RunConfig config = parse_config(config_path);
  const Dataset data = load_data(config.data);
  SweepOptions options;
  options.trials = trials;

  SweepTable table;
  std::vector<std::size_t> used = values;
  if (kind == "layers") {
    if (used.empty()) used = {1, 2, 3, 4};
    std::vector<int> layers(used.begin(), used.end());
    table = sweep_layers(config.model, config.train, data, layers, options);
  } else if (kind == "code-size") {
    if (used.empty()) used = {8, 16, 32, 64};
    table = sweep_code_size(config.model, config.train, data, used, options);
  } else {
    table = compare_sharing(config.model, config.train, data, options);
  }
  json key = to_json(config);
  key["sweep"] = {{"kind", kind}, {"values", used}, {"trials", trials}};
  table.config_digest = hex_digest(key.dump());

  json j = sweep_to_json(table);
  if (kind == "sharing") j["param_delta"] = sharing_param_delta(config.model);
  const fs::path dir = out_dir ? fs::path(*out_dir) : fs::path(config.output_dir);
  const std::string stem = "sweep_" + table.name + "_" + table.config_digest;
  write_json(dir / (stem + ".json"), j);
  std::ostringstream csv;
  write_sweep_csv(table, csv);
  write_text(dir / (stem + ".csv"), csv.str());

  out << table.column << "\tembed_params\tmodel_params\tval_acc\ttrain_acc\n";
  for (const auto& r : table.rows) {
    out << r.value << '\t' << r.embed_params << '\t' << r.model_params << '\t' << std::fixed
        << std::setprecision(4) << r.val_acc_mean << " +- " << r.val_acc_std << '\t'
        << r.train_acc_mean << " +- " << r.train_acc_std << std::defaultfloat << '\n';
  }
  if (kind == "sharing") out << "param delta " << sharing_param_delta(config.model) << '\n';
  out << "outputs written to " << dir.string() << '\n';
  return kExitOk;
}

int run_bench(std::size_t d, std::vector<std::size_t> n_list, std::size_t repeats,
              std::size_t heads, std::uint64_t seed, const std::string& out_dir,
              std::ostream& out) {
  if (!std::is_sorted(n_list.begin(), n_list.end())) {
    throw UsageError("--n values must be ascending");
  }
  if (repeats < 5) throw UsageError("--repeats must be at least 5");
  const auto rows = bench_attention(n_list, d, repeats, heads, seed);
  const json j = bench_to_json(rows, d, heads, repeats, seed);
  const std::string digest = hex_digest(j["metadata"].dump() + json(n_list).dump());
  write_json(fs::path(out_dir) / ("bench_" + digest + ".json"), j);
  std::ostringstream csv;
  write_bench_csv(rows, csv, d, heads, repeats, seed);
  write_text(fs::path(out_dir) / ("bench_" + digest + ".csv"), csv.str());

  out << "kind\tN\tmedian_ns\tattn_bytes\n";
  for (const auto& r : rows) {
    out << attention_name(r.kind) << '\t' << r.n << '\t' << static_cast<long long>(r.median_ns)
        << '\t' << r.attn_bytes << '\n';
  }
  return kExitOk;
}

// Finds the first "--flag" CLI11 did not recognise and suggests a known one.
std::string unknown_flag_message(const CLI::App& app, const std::vector<std::string>& args) {
  const CLI::App* sub = nullptr;
  for (const auto* s : app.get_subcommands()) sub = s;
  std::vector<std::string> known;
  for (const auto* a : {&app, sub}) {
    if (!a) continue;
    for (const auto* o : a->get_options()) {
      for (const auto& n : o->get_lnames()) known.push_back("--" + n);
    }
  }
  for (const auto& arg : args) {
    if (arg.rfind("--", 0) != 0) continue;
    const std::string name = arg.substr(0, arg.find('='));
    if (std::find(known.begin(), known.end(), name) != known.end()) continue;
    std::string msg = "unknown flag '" + name + "'";
    if (auto s = closest_match(name, known)) msg += " (did you mean '" + *s + "'?)";
    return msg;
  }
  return {};
}

}  // namespace

GradCheckResult model_grad_check(const RunConfig& config, const GradCheckOptions& options,
                                 ProbePoint point, std::size_t batch) {
  const Dataset data = load_data(config.data);
  Model model(config.model, config.train.seed);
  if (point == ProbePoint::Generic) model.randomize(config.train.seed);
  const Batch b = first_train_batch(data, batch);
  const auto params = model.params().tensors();
  const auto names = model.params().names();
  return grad_check([&] { return cross_entropy(model.forward(b.images), b.labels); }, params,
                    options, names);
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Non-linear QKV embeddings in a cross-covariance attention encoder", "qkvembed"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);

  std::string config, checkpoint, data_path, out_dir = "runs", sweep_kind, point_name = "generic";
  std::optional<std::string> out_override, full_dims;
  double eps = 1e-4;
  std::size_t samples = 64, trials = 3, block = 0, d = 64, repeats = 9, heads = 1;
  std::uint64_t seed = 0;
  bool quiet = false;
  std::vector<std::size_t> values, n_list;

  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--out", out_override, "Output directory (overrides output_dir)");
  train->add_flag("--quiet", quiet, "Suppress per-epoch lines");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a data source");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data_path, "Data source (JSON, same schema as the data section)")
      ->required();
  eval->add_option("--out", out_dir, "Output directory");

  auto* count = app.add_subcommand("count-params", "Per-group parameter counts");
  count->add_option("--config", config, "Run config (JSON)")->required();
  count->add_option("--full-dims", full_dims, "Count the same variant at nano or tiny dims");
  count->add_option("--out", out_override, "Output directory (overrides output_dir)");

  auto* grad = app.add_subcommand("grad-check", "Compare autodiff gradients with finite differences");
  grad->add_option("--config", config, "Run config (JSON)")->required();
  grad->add_option("--eps", eps, "Middle step of the central-difference ladder")->capture_default_str();
  grad->add_option("--samples", samples, "Elements probed per tensor")->capture_default_str();
  grad->add_option("--point", point_name, "Where to probe: generic or init")->capture_default_str();
  grad->add_option("--out", out_override, "Output directory (overrides output_dir)");

  auto* analyze = app.add_subcommand("analyze-codes", "Code correlation and norms of a checkpoint");
  analyze->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  analyze->add_option("--block", block, "Encoder whose codes to read (unshared codes)");
  analyze->add_option("--out", out_dir, "Output directory");

  auto* sweep = app.add_subcommand("sweep", "Ablation sweeps: layers, code-size, sharing");
  sweep->add_option("kind", sweep_kind, "layers | code-size | sharing")->required();
  sweep->add_option("--config", config, "Base run config (JSON)")->required();
  sweep->add_option("--trials", trials, "Seeds per cell")->capture_default_str();
  sweep->add_option("--values", values, "Swept values, comma separated")->delimiter(',');
  sweep->add_option("--out", out_override, "Output directory (overrides output_dir)");

  auto* bench = app.add_subcommand("bench-attention", "Time the SA and XCA cores over token counts");
  bench->add_option("--d", d, "Token width")->capture_default_str();
  bench->add_option("--n", n_list, "Token counts, comma separated")->delimiter(',')->required();
  bench->add_option("--repeats", repeats, "Timed repeats per cell")->capture_default_str();
  bench->add_option("--heads", heads, "Heads")->capture_default_str();
  bench->add_option("--seed", seed, "Input seed")->capture_default_str();
  bench->add_option("--out", out_dir, "Output directory");

  if (argc < 2) {
    err << app.help();
    return kExitUsage;
  }
  const std::string first = argv[1];
  if (first.rfind('-', 0) != 0 &&
      std::find(kSubcommands.begin(), kSubcommands.end(), first) == kSubcommands.end()) {
    err << "error: unknown subcommand '" << first << "'";
    if (auto s = closest_match(first, kSubcommands)) err << " (did you mean '" << *s << "'?)";
    err << "\nrun 'qkvembed --help' for usage\n";
    return kExitUsage;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::vector<std::string> args(argv + 1, argv + argc);
    const std::string flag = unknown_flag_message(app, args);
    err << "error: " << (flag.empty() ? std::string(e.what()) : flag) << '\n';
    err << "run 'qkvembed " << (app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name() + " ")
        << "--help' for usage\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) return run_train(config, out_override, quiet, out);
    if (eval->parsed()) return run_eval(checkpoint, data_path, out_dir, out);
    if (count->parsed()) return run_count(config, full_dims, out_override, out);
    if (grad->parsed()) return run_grad_check(config, eps, samples, point_name, out_override, out);
    if (analyze->parsed()) return run_analyze(checkpoint, block, out_dir, out);
    if (sweep->parsed()) return run_sweep(sweep_kind, config, trials, values, out_override, out);
    if (bench->parsed()) return run_bench(d, n_list, repeats, heads, seed, out_dir, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace qkv::cli

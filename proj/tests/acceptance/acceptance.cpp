// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "oracles.hpp"
#include "qkv/analysis.hpp"
#include "qkv/checkpoint.hpp"
#include "qkv/config.hpp"
#include "qkv/ops.hpp"
#include "qkv/train.hpp"

using namespace qkv;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string config_path(const std::string& name) {
  return std::string(QKV_CONFIG_DIR) + "/" + name;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "qkv_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::vector<std::string> kVariants = {"conventional", "sne", "psne", "fsne"};

void gradient_correctness(Outcome& o) {
  const auto t0 = Clock::now();
  for (const auto& v : kVariants) {
    const RunConfig config = parse_config(config_path("gradcheck_" + v + ".json"));
    GradCheckOptions options;
    options.seed = config.train.seed;
    const auto r = cli::model_grad_check(config, options);
    o.detail << v << " " << r.max_relative_error << " (" << r.elements_checked << " el); ";
    o.check(r.max_relative_error < 1e-4, v + " error >= 1e-4 at " + r.worst_param);
  }
  const double t = seconds_since(t0);
  o.detail << "total " << t << " s";
  o.check(t < 60.0, "runtime >= 60 s");
}

void reference_parity(Outcome& o) {
  for (auto v : {Variant::Conventional, Variant::SNE, Variant::PSNE}) {
    const auto nano = embedding_param_count(reference_embed_config(ModelScale::Nano, v), 12).per_block;
    const auto tiny = embedding_param_count(reference_embed_config(ModelScale::Tiny, v), 12).per_block;
    o.detail << variant_name(v) << " " << nano << "/" << tiny << "; ";
    o.check(nano == 49152, std::string(variant_name(v)) + " nano");
    o.check(tiny == 110592, std::string(variant_name(v)) + " tiny");
  }
}

void fsne_savings(Outcome& o) {
  const auto base = embedding_param_count(reference_embed_config(ModelScale::Nano, Variant::Conventional), 12);
  const auto f = embedding_param_count(reference_embed_config(ModelScale::Nano, Variant::FSNE, 8), 12);
  const std::size_t saving = 12 * (base.per_block - f.per_block);
  // Whole-model gap 3.1M -> 2.9M.
  const double gap = 3.1e6 - 2.9e6;
  o.detail << "per-block " << f.per_block << ", saving " << saving << " (with codes "
           << base.total - f.total << "), reported gap " << gap;
  o.check(f.per_block == 33792, "per-block count");
  o.check(saving == 184320, "12-encoder saving");
  o.check(std::abs(static_cast<double>(saving) - gap) <= 0.05e6, "saving vs gap");
  o.check(std::abs(static_cast<double>(base.total - f.total) - gap) <= 0.05e6, "saving with codes vs gap");
}

void starred_parity(Outcome& o) {
  for (auto scale : {ModelScale::Nano, ModelScale::Tiny}) {
    const auto star = reference_embed_config(scale, Variant::FSNE, 8, true);
    const auto n = embedding_param_count(star, 12).per_block;
    const auto b = embedding_param_count(reference_embed_config(scale, Variant::Conventional), 12).per_block;
    const double rel = std::abs(static_cast<double>(n) - static_cast<double>(b)) / static_cast<double>(b);
    o.detail << "hidden " << star.hidden << ": " << n << " vs " << b << " (" << rel * 100 << "%); ";
    o.check(n == (scale == ModelScale::Nano ? 49104u : 110544u), "starred count");
    o.check(rel <= 1e-3, "within 0.1%");
  }
}

void sharing_delta(Outcome& o) {
  ModelConfig shared = with_full_dims(ModelConfig{}, ModelScale::Nano);
  shared.embed.variant = Variant::FSNE;
  shared.embed.code_size = 8;
  shared.embed.hidden = shared.d;
  ModelConfig unshared = shared;
  unshared.embed.share_codes = false;
  const auto delta = count_params(unshared).total - count_params(shared).total;
  o.detail << "E=" << shared.num_encoders << " c=8 delta " << delta << ", sharing_param_delta "
           << sharing_param_delta(shared);
  o.check(delta == 3 * 8 * (shared.num_encoders - 1), "delta != 3c(E-1)");
  o.check(delta == 264, "delta != 264");
  o.check(sharing_param_delta(shared) == delta, "sharing_param_delta");
}

void xca_scaling(Outcome& o) {
  const std::size_t dh = 16;
  for (std::size_t n : {16u, 256u, 1024u}) {
    auto q = oracle::random_tensor({n, dh}, n);
    auto k = oracle::random_tensor({n, dh}, n + 1);
    const auto a = xca_weights(q, k, Tensor({1}, {0.0}));
    o.check(a.shape() == Shape{dh, dh}, "extent at N=" + std::to_string(n));
  }
  const std::vector<std::size_t> n_list{256, 1024};
  const auto rows = bench_attention(n_list, 64, 9, 1);
  double sa = 0, xc = 0;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    const double ratio = rows[i + 1].median_ns / rows[i].median_ns;
    (rows[i].kind == AttentionKind::SA ? sa : xc) = ratio;
  }
  o.detail << "extents [16x16] for N=16,256,1024; time ratio 1024/256 SA " << sa << ", XCA " << xc;
  o.check(xc <= 6.0, "XCA ratio > 6");
  o.check(sa >= 10.0, "SA ratio < 10");
}

void normalization_suite(Outcome& o) {
  double worst_sum = 0, worst_perm = 0, worst_scale = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const std::size_t n = 12, dh = 6;
    auto q = oracle::random_tensor({n, dh}, 10 * s + 1);
    auto k = oracle::random_tensor({n, dh}, 10 * s + 2);
    auto v = oracle::random_tensor({n, dh}, 10 * s + 3);
    const auto sa = oracle::from_tensor(self_attention_weights(q, k));
    for (std::size_t i = 0; i < sa.rows; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < sa.cols; ++j) row += sa.v[i * sa.cols + j];
      worst_sum = std::max(worst_sum, std::abs(row - 1.0));
    }
    const double tau = 0.3 + 0.1 * static_cast<double>(s);
    const Tensor log_tau({1}, {std::log(tau)});
    const auto xa = oracle::from_tensor(xca_weights(q, k, log_tau));
    for (std::size_t j = 0; j < xa.cols; ++j) {
      double col = 0;
      for (std::size_t i = 0; i < xa.rows; ++i) col += xa.v[i * xa.cols + j];
      worst_sum = std::max(worst_sum, std::abs(col - 1.0));
    }
    const auto out = oracle::from_tensor(xca(q, k, v, log_tau));
    const auto perm = oracle::random_permutation(n, 100 + s);
    auto pm = [&](const Tensor& t) {
      return oracle::to_tensor(oracle::permute_rows(oracle::from_tensor(t), perm));
    };
    const auto permuted = xca(pm(q), pm(k), pm(v), log_tau);
    worst_perm = std::max(worst_perm, oracle::max_abs_diff(permuted, oracle::permute_rows(out, perm)));
    const double alpha = 0.01 + 3.0 * static_cast<double>(s);
    const auto scaled = xca(mul(q, alpha), mul(k, alpha), v, log_tau);
    worst_scale = std::max(worst_scale, oracle::max_abs_diff(scaled, out));
  }
  o.detail << "20 seeds: max |sum-1| " << worst_sum << ", permutation " << worst_perm
           << ", rescaling " << worst_scale;
  o.check(worst_sum <= 1e-9, "row/column sums");
  o.check(worst_perm <= 1e-9, "permutation equivariance");
  o.check(worst_scale <= 1e-9, "scale invariance");
}

void shared_gradient_identity(Outcome& o) {
  ModelConfig c = parse_config(config_path("gradcheck_fsne.json")).model;
  c.num_encoders = 3;
  ModelConfig u = c;
  u.embed.share_codes = false;
  Model shared(c, 5);
  shared.randomize(6);
  Model unshared(u, 5);
  for (const auto& e : unshared.params().entries()) {
    std::string from = e.name;
    const auto pos = from.find(".codes.");
    if (pos != std::string::npos) from = from.substr(pos + 1);
    const auto src = shared.params().get(from).data();
    Tensor dst = e.tensor;
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
  const auto images = oracle::random_tensor({3, 1, c.image_size, c.image_size}, 7, 0.0, 1.0);
  const std::vector<int> labels{0, 1, 3};
  cross_entropy(shared.forward(images), labels).backward();
  cross_entropy(unshared.forward(images), labels).backward();
  double worst = 0;
  for (const char* s : {"q", "k", "v"}) {
    const auto g = shared.params().get(std::string("codes.") + s).grad();
    std::vector<double> sum(g.size(), 0.0);
    for (std::size_t b = 0; b < c.num_encoders; ++b) {
      const auto gb = unshared.params().get("blocks." + std::to_string(b) + ".codes." + s).grad();
      for (std::size_t i = 0; i < gb.size(); ++i) sum[i] += gb[i];
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double rel = std::abs(g[i] - sum[i]) / std::max(std::abs(g[i]) + std::abs(sum[i]), 1e-300);
      worst = std::max(worst, rel);
    }
  }
  o.detail << "E=3, max relative difference " << worst;
  o.check(worst < 1e-10, "relative error >= 1e-10");
}

void learnability(Outcome& o) {
  for (const auto& v : kVariants) {
    const RunConfig config = parse_config(config_path("mini_" + v + ".json"));
    const Dataset data = load_data(config.data);
    Model model(config.model, config.train.seed);
    const auto t0 = Clock::now();
    FitOptions fit_options;
    fit_options.config_digest = config_digest(config);
    const auto report = fit(model, data, config.train, fit_options);
    const double t = seconds_since(t0);
    const double acc = report.epochs.back().train_acc;
    o.detail << v << " " << acc << " @" << report.epochs.size() << " ep " << t << " s; ";
    o.check(data.train_idx.size() + data.val_idx.size() == 2000, v + " M != 2000");
    o.check(acc >= 0.95 && report.epochs.size() <= 200, v + " below 95% in 200 epochs");
    o.check(t < 300.0, v + " over 5 min");
    if (config.model.embed.variant == Variant::FSNE) {
      o.check(report.codes.has_value(), "fsne diagnostics missing");
      if (report.codes) {
        const auto& m = report.codes->correlation;
        for (std::size_t i = 0; i < 3; ++i) {
          o.check(std::abs(m[i][i] - 1.0) <= 1e-12, "diagonal");
          for (std::size_t j = 0; j < 3; ++j) o.check(m[i][j] == m[j][i], "symmetry");
        }
      }
    }
  }
}

void determinism_and_persistence(Outcome& o) {
  RunConfig config = parse_config(config_path("mini_fsne.json"));
  config.train.epochs = 3;
  config.train.target_train_acc.reset();
  const Dataset data = load_data(config.data);
  std::vector<double> losses[2];
  for (auto& l : losses) {
    Model m(config.model, config.train.seed);
    for (const auto& e : fit(m, data, config.train).epochs) l.push_back(e.loss);
  }
  o.check(losses[0] == losses[1], "loss trajectory differs");

  Model model(config.model, config.train.seed);
  fit(model, data, config.train);
  const auto path = scratch("persist") / "model.bin";
  save_checkpoint(model, path);
  const Model back = load_checkpoint(path);
  bool bitwise = back.params().size() == model.params().size();
  for (const auto& e : model.params().entries())
    bitwise = bitwise && oracle::bitwise_equal(e.tensor, back.params().get(e.name));
  o.check(bitwise, "round-trip");

  ModelConfig target = config.model;
  target.num_classes = 6;
  const Model moved = load_checkpoint(path, target, LoadMode::Transfer, 42);
  const Model fresh(target, 42);
  bool transfer = true;
  std::size_t head = 0;
  for (const auto& e : moved.params().entries()) {
    if (e.group == ParamGroup::Head) {
      ++head;
      transfer = transfer && oracle::bitwise_equal(e.tensor, fresh.params().get(e.name));
    } else {
      transfer = transfer && oracle::bitwise_equal(e.tensor, model.params().get(e.name));
    }
  }
  o.check(transfer && head == 2, "transfer");
  o.detail << "3-epoch losses identical over 2 runs; " << model.params().size()
           << " tensors round-trip bitwise; transfer re-drew " << head << " head tensors";
}

void ablation_machinery(Outcome& o) {
  const auto dir = scratch("sweeps");
  for (const auto& [kind, base, values] :
       {std::tuple<std::string, std::string, std::string>{"layers", "mini_sne.json", "1,2,3,4"},
        {"code-size", "mini_fsne.json", "8,16,32,64"}}) {
    json j = json::parse(std::ifstream(config_path(base)));
    j["train"]["epochs"] = 5;
    j["output_dir"] = dir.string();
    const auto cfg = dir / ("base_" + base);
    std::ofstream(cfg) << j.dump();

    const std::vector<std::string> args{"qkvembed", "sweep",    kind,          "--config",
                                        cfg.string(), "--values", values,        "--trials",
                                        "1",          "--out",    dir.string()};
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    o.check(code == 0, kind + " exit code " + std::to_string(code) + ": " + err.str());
    if (code != 0) continue;

    const RunConfig run = parse_config(cfg);
    json table;
    for (const auto& f : fs::directory_iterator(dir)) {
      const auto name = f.path().filename().string();
      const auto stem = kind == "layers" ? "sweep_layers_" : "sweep_code_size_";
      if (name.rfind(stem, 0) == 0 && f.path().extension() == ".json")
        table = json::parse(std::ifstream(f.path()));
    }
    o.check(table.contains("rows") && table["rows"].size() == 4, kind + " rows");
    if (!table.contains("rows")) continue;
    for (const auto& row : table["rows"]) {
      EmbedConfig e = run.model.embed;
      std::size_t value = 0;
      for (const auto& [key, val] : row.items())
        if (key != "embed_params" && key != "model_params" && val.is_number_unsigned())
          value = val.get<std::size_t>();
      if (kind == "layers") e.layers = static_cast<int>(value);
      else e.code_size = value;
      const auto expected = embedding_param_count(e, run.model.num_encoders).total;
      o.check(row["embed_params"].get<std::size_t>() == expected,
              kind + " count at " + std::to_string(value));
      o.detail << kind << "=" << value << ":" << expected << " ";
    }
  }
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"reference parameter parity", reference_parity},
      {"F-SNE savings", fsne_savings},
      {"starred parity", starred_parity},
      {"code-sharing arithmetic", sharing_delta},
      {"XCA structure and scaling", xca_scaling},
      {"normalization and equivariance", normalization_suite},
      {"shared-gradient identity", shared_gradient_identity},
      {"desk-scale learnability", learnability},
      {"determinism and persistence", determinism_and_persistence},
      {"ablation machinery", ablation_machinery},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "]";
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first
              << ": " << o.detail.str() << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}

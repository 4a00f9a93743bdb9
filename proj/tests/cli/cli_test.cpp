// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "qkv/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(std::initializer_list<std::string> args) {
  std::vector<std::string> storage{"qkvembed"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = qkv::cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string config(const std::string& name) { return std::string(QKV_CONFIG_DIR) + "/" + name; }

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "qkv_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A two-epoch FSNE run on 40 samples.
fs::path quick_config(const fs::path& dir) {
  const auto path = dir / "quick.json";
  std::ofstream(path) << R"({
    "model": {"image_size": 8, "patch_size": 4, "d": 8, "heads": 2, "num_encoders": 2,
              "num_classes": 4, "embed": {"variant": "fsne", "hidden": 8, "code_size": 2}},
    "train": {"epochs": 2, "batch_size": 16, "seed": 3},
    "data": {"source": "synthetic", "num_samples": 40, "seed": 1},
    "output_dir": ")" << (dir / "default_out").string() << R"("
  })";
  return path;
}

bool contains(const std::string& s, const std::string& part) {
  return s.find(part) != std::string::npos;
}

}  // namespace

TEST(Cli, NoArgumentsPrintsUsage) {
  const auto r = run({});
  EXPECT_EQ(r.code, qkv::cli::kExitUsage);
  EXPECT_TRUE(contains(r.err, "train")) << r.err;
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(contains(r.out, "count-params")) << r.out;
  EXPECT_EQ(run({"train", "--help"}).code, 0);
}

TEST(Cli, UnknownSubcommandSuggests) {
  const auto r = run({"trian"});
  EXPECT_EQ(r.code, qkv::cli::kExitUsage);
  EXPECT_TRUE(contains(r.err, "did you mean 'train'")) << r.err;
}

TEST(Cli, UnknownFlagSuggests) {
  const auto r = run({"count-params", "--confg", config("mini_nano.json")});
  EXPECT_EQ(r.code, qkv::cli::kExitUsage);
  EXPECT_TRUE(contains(r.err, "--config")) << r.err;
}

TEST(Cli, BadFlagValueIsUsageError) {
  const auto dir = fresh_dir("bad_value");
  const auto r = run({"count-params", "--config", config("mini_nano.json"), "--full-dims", "huge",
                      "--out", dir.string()});
  EXPECT_EQ(r.code, qkv::cli::kExitUsage);
  EXPECT_TRUE(contains(r.err, "nano or tiny")) << r.err;
}

TEST(Cli, CountParamsPrintsGroupsAndWritesDigestFile) {
  const auto dir = fresh_dir("count");
  const auto r = run({"count-params", "--config", config("mini_nano.json"), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "embed_qkv")) << r.out;
  EXPECT_TRUE(contains(r.out, "total")) << r.out;
  const auto model = qkv::parse_config(config("mini_nano.json")).model;
  const auto file = dir / ("count_" + qkv::model_config_digest(model) + ".json");
  ASSERT_TRUE(fs::exists(file));
  const auto j = json::parse(slurp(file));
  EXPECT_EQ(j["total"].get<std::size_t>(), qkv::count_params(model).total);
  EXPECT_EQ(j["embedding"]["total"].get<std::size_t>(),
            qkv::embedding_param_count(model.embed, model.num_encoders).total);
}

TEST(Cli, CountParamsFullDims) {
  const auto dir = fresh_dir("count_full");
  const auto r = run({"count-params", "--config", config("mini_fsne.json"), "--full-dims", "nano",
                      "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  // Nano F-SNE, c = 2: 12 * ((128 + 2) * 128 + 128 * 128) + 3 * 2.
  EXPECT_TRUE(contains(r.out, "all encoders 396,294")) << r.out;
}

TEST(Cli, GradCheckPasses) {
  const auto dir = fresh_dir("grad");
  const auto r = run({"grad-check", "--config", config("gradcheck_sne.json"), "--out", dir.string()});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_TRUE(contains(r.out, "PASS")) << r.out;
  const auto digest = qkv::config_digest(qkv::parse_config(config("gradcheck_sne.json")));
  const auto j = json::parse(slurp(dir / ("gradcheck_" + digest + ".json")));
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_LT(j["max_relative_error"].get<double>(), 1e-4);
}

TEST(Cli, GradCheckRejectsUnknownPoint) {
  const auto r = run({"grad-check", "--config", config("gradcheck_sne.json"), "--point", "corner"});
  EXPECT_EQ(r.code, qkv::cli::kExitUsage);
}

TEST(Cli, MissingConfigIsRuntimeError) {
  const auto r = run({"train", "--config", "/nonexistent/run.json"});
  EXPECT_EQ(r.code, qkv::cli::kExitRuntime);
  EXPECT_TRUE(contains(r.err, "error")) << r.err;
}

TEST(Cli, InvalidConfigKeyIsRuntimeErrorWithSuggestion) {
  const auto dir = fresh_dir("bad_config");
  const auto path = dir / "bad.json";
  std::ofstream(path) << R"({"train": {"epocs": 3}})";
  const auto r = run({"train", "--config", path.string(), "--out", dir.string()});
  EXPECT_EQ(r.code, qkv::cli::kExitRuntime);
  EXPECT_TRUE(contains(r.err, "train.epocs")) << r.err;
  EXPECT_TRUE(contains(r.err, "epochs")) << r.err;
}

TEST(Cli, TrainEvalAnalyzeEndToEnd) {
  const auto dir = fresh_dir("e2e");
  const auto cfg = quick_config(dir);
  const auto digest = qkv::config_digest(qkv::parse_config(cfg));
  const auto out = dir / "run";
  const auto r = run({"train", "--config", cfg.string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "epoch 2")) << r.out;
  EXPECT_TRUE(contains(r.out, "code correlation")) << r.out;
  for (const auto* stem : {"config_", "train_", "checkpoint_"}) {
    const auto ext = std::string(stem) == "checkpoint_" ? ".bin" : ".json";
    EXPECT_TRUE(fs::exists(out / (stem + digest + ext))) << stem;
  }
  const auto report = json::parse(slurp(out / ("train_" + digest + ".json")));
  EXPECT_EQ(report["metadata"]["config_digest"], digest);
  EXPECT_EQ(report["epochs"].size(), 2u);
  const auto csv = slurp(out / ("train_" + digest + ".csv"));
  EXPECT_TRUE(contains(csv, "epoch,loss,train_acc,val_acc")) << csv;

  const auto ckpt = out / ("checkpoint_" + digest + ".bin");
  const auto data = dir / "data.json";
  std::ofstream(data) << R"({"source": "synthetic", "num_samples": 40, "seed": 1})";
  const auto e = run({"eval", "--checkpoint", ckpt.string(), "--data", data.string(), "--out",
                      out.string()});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_TRUE(contains(e.out, "accuracy")) << e.out;

  const auto a = run({"analyze-codes", "--checkpoint", ckpt.string(), "--out", out.string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_TRUE(contains(a.out, "C_v")) << a.out;
  bool found_json = false, found_csv = false;
  for (const auto& f : fs::directory_iterator(out)) {
    const auto name = f.path().filename().string();
    if (name.rfind("eval_", 0) == 0) EXPECT_EQ(f.path().extension(), ".json");
    if (name.rfind("codes_", 0) == 0 && f.path().extension() == ".json") found_json = true;
    if (name.rfind("codes_", 0) == 0 && f.path().extension() == ".csv") found_csv = true;
  }
  EXPECT_TRUE(found_json);
  EXPECT_TRUE(found_csv);
}

TEST(Cli, RetrainingReproducesResults) {
  const auto dir = fresh_dir("replay");
  const auto cfg = quick_config(dir);
  const auto digest = qkv::config_digest(qkv::parse_config(cfg));
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "a").string(), "--quiet"}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "b").string(), "--quiet"}).code, 0);
  const auto name = "checkpoint_" + digest + ".bin";
  EXPECT_EQ(slurp(dir / "a" / name), slurp(dir / "b" / name));
  auto ja = json::parse(slurp(dir / "a" / ("train_" + digest + ".json")));
  auto jb = json::parse(slurp(dir / "b" / ("train_" + digest + ".json")));
  ja.erase("wall_time_s");
  jb.erase("wall_time_s");
  EXPECT_EQ(ja, jb);
  EXPECT_EQ(slurp(dir / "a" / ("train_" + digest + ".csv")),
            slurp(dir / "b" / ("train_" + digest + ".csv")));
}

TEST(Cli, AnalyzeCodesOnNonFsneIsRuntimeError) {
  const auto dir = fresh_dir("analyze_sne");
  const auto path = dir / "sne.json";
  std::ofstream(path) << R"({
    "model": {"image_size": 8, "patch_size": 4, "d": 8, "heads": 2, "num_encoders": 1,
              "num_classes": 4, "embed": {"variant": "sne", "hidden": 4}},
    "train": {"epochs": 1, "batch_size": 16},
    "data": {"source": "synthetic", "num_samples": 40}
  })";
  ASSERT_EQ(run({"train", "--config", path.string(), "--out", dir.string(), "--quiet"}).code, 0);
  const auto digest = qkv::config_digest(qkv::parse_config(path));
  const auto r = run({"analyze-codes", "--checkpoint",
                      (dir / ("checkpoint_" + digest + ".bin")).string(), "--out", dir.string()});
  EXPECT_EQ(r.code, qkv::cli::kExitRuntime);
}

TEST(Cli, SweepSharingSmoke) {
  const auto dir = fresh_dir("sweep");
  const auto cfg = quick_config(dir);
  const auto r = run({"sweep", "sharing", "--config", cfg.string(), "--trials", "1", "--out",
                      dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "param delta 6")) << r.out;
  const auto bad = run({"sweep", "layer", "--config", cfg.string()});
  EXPECT_EQ(bad.code, qkv::cli::kExitUsage);
  EXPECT_TRUE(contains(bad.err, "did you mean 'layers'")) << bad.err;
}

TEST(Cli, BenchAttentionSmokeAndValidation) {
  const auto dir = fresh_dir("bench");
  const auto r = run({"bench-attention", "--d", "16", "--n", "16,32", "--repeats", "5", "--heads",
                      "2", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "xca\t32")) << r.out;
  EXPECT_EQ(run({"bench-attention", "--n", "32,16"}).code, qkv::cli::kExitUsage);
  EXPECT_EQ(run({"bench-attention", "--n", "16", "--repeats", "3"}).code, qkv::cli::kExitUsage);
}

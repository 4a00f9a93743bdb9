// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qkv/data.hpp"
#include "qkv/diagnostics.hpp"
#include "qkv/model.hpp"

namespace qkv {

enum class OptimizerKind { SGD, AdamW };
enum class LrSchedule { Constant, Cosine };

std::string_view optimizer_name(OptimizerKind kind);
std::string_view schedule_name(LrSchedule schedule);

/// Training loss is cross-entropy plus a weight-decay regularizer. SGD adds
/// lambda/2 * sum |theta|^2 to the loss; AdamW applies the decay decoupled
/// at update time. Codes are ordinary parameters and are decayed unless
/// decay_codes is false.
struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 5e-4;
  double weight_decay = 0.05;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  std::uint64_t seed = 0;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  bool decay_codes = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Stop once the post-epoch train accuracy reaches this value.
  std::optional<double> target_train_acc;

  void validate() const;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamWHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One AdamW step: param *= (1 - lr * lambda), then the bias-corrected
/// Adam update. `step` counts from 1.
void adamw_update(std::span<double> param, std::span<const double> grad,
                  AdamMoments& moments, std::int64_t step, const AdamWHyper& hyper);

/// Plain gradient step: param -= lr * grad.
void sgd_update(std::span<double> param, std::span<const double> grad, double lr);

struct OptimizerState {
  std::int64_t step = 0;
  std::vector<AdamMoments> moments;  ///< one per registry entry
};

struct Batch {
  Tensor images;  ///< [B x C x H x W]
  std::vector<int> labels;
};

using GroupNorms = std::array<double, kAllGroups.size()>;

struct StepResult {
  double loss = 0.0;           ///< optimized objective
  double cross_entropy = 0.0;  ///< data term only
  std::size_t correct = 0;
  GroupNorms grad_norms{};
};

/// Forward, backward and one optimizer update over every registered
/// parameter. Gradients are cleared afterwards. A non-finite loss throws
/// NumericError naming the first parameter group holding non-finite values
/// or gradients. `lr` overrides config.learning_rate (used by schedules).
StepResult train_step(Model& model, const Batch& batch, OptimizerState& state,
                      const TrainConfig& config, std::optional<double> lr = std::nullopt);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

EvalResult evaluate(const Model& model, const Dataset& data,
                    std::span<const std::size_t> indices, std::size_t batch_size = 256);

struct EpochRecord {
  std::size_t epoch = 0;  ///< counts from 1
  double loss = 0.0;  ///< mean objective over the epoch's steps
  double train_acc = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
  GroupNorms grad_norms{};  ///< mean per-step gradient norm per group
};

struct RunReport {
  std::vector<EpochRecord> epochs;
  std::optional<CodeDiagnostics> codes;
  double wall_time_s = 0.0;
  double best_val_acc = 0.0;
  std::size_t best_epoch = 0;
  bool reached_target = false;
  std::string config_digest;
  std::uint64_t seed = 0;
};

struct FitOptions {
  /// Written whenever validation accuracy improves.
  std::optional<std::filesystem::path> checkpoint_path;
  std::string config_digest;
  std::function<void(const EpochRecord&)> on_epoch;
};

double scheduled_lr(const TrainConfig& config, std::size_t epoch);

RunReport fit(Model& model, const Dataset& data, const TrainConfig& config,
              const FitOptions& options = {});

nlohmann::json report_to_json(const RunReport& report);

/// Columns: epoch, loss, train_acc, val_acc, grad_norm_<group>..., lr.
/// Preceded by '#'-prefixed metadata lines.
void write_report_csv(const RunReport& report, std::ostream& out);

}  // namespace qkv

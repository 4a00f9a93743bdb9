// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>

#include "qkv/checkpoint.hpp"
#include "qkv/errors.hpp"
#include "qkv/ops.hpp"
#include "qkv/util.hpp"

namespace qkv {

namespace {

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// Name of the first group (registry order) holding non-finite values, then
// non-finite gradients.
std::string first_nonfinite_group(const ParamRegistry& registry) {
  for (const auto& e : registry.entries()) {
    if (!all_finite(e.tensor.data())) {
      return std::string(group_name(e.group)) + " (value of " + e.name + ")";
    }
  }
  for (const auto& e : registry.entries()) {
    if (e.tensor.has_grad() && !all_finite(e.tensor.grad())) {
      return std::string(group_name(e.group)) + " (gradient of " + e.name + ")";
    }
  }
  return "none (loss only)";
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t k = logits.dim(1);
  auto data = logits.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = data.data() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return correct;
}

double decay_for(const ParamEntry& e, const TrainConfig& config) {
  if (e.group == ParamGroup::Codes && !config.decay_codes) return 0.0;
  return config.weight_decay;
}

}  // namespace

std::string_view optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::SGD ? "sgd" : "adamw";
}

std::string_view schedule_name(LrSchedule schedule) {
  return schedule == LrSchedule::Constant ? "constant" : "cosine";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (target_train_acc && !(*target_train_acc > 0.0 && *target_train_acc <= 1.0)) {
    throw ConfigError("train.target_train_acc must lie in (0, 1]");
  }
}

void adamw_update(std::span<double> param, std::span<const double> grad,
                  AdamMoments& moments, std::int64_t step, const AdamWHyper& hyper) {
  if (param.size() != grad.size()) {
    throw DimensionError("adamw_update: param/grad sizes differ");
  }
  if (step < 1) throw Error("adamw_update: step counts from 1");
  if (moments.m.size() != param.size()) {
    moments.m.assign(param.size(), 0.0);
    moments.v.assign(param.size(), 0.0);
  }
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  const double shrink = 1.0 - hyper.lr * hyper.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    param[i] *= shrink;
    moments.m[i] = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * grad[i];
    moments.v[i] = hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
    const double m_hat = moments.m[i] / bc1;
    const double v_hat = moments.v[i] / bc2;
    param[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

void sgd_update(std::span<double> param, std::span<const double> grad, double lr) {
  if (param.size() != grad.size()) throw DimensionError("sgd_update: param/grad sizes differ");
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

StepResult train_step(Model& model, const Batch& batch, OptimizerState& state,
                      const TrainConfig& config, std::optional<double> lr) {
  if (batch.labels.empty()) throw Error("train_step on an empty batch");
  const double step_lr = lr.value_or(config.learning_rate);
  auto& registry = model.params();
  registry.zero_grad();

  Tensor logits;
  try {
    logits = model.forward(batch.images);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + "; first non-finite group: " +
                       first_nonfinite_group(registry));
  }
  const auto ce = cross_entropy(logits, batch.labels);
  Tensor objective = ce;
  if (config.optimizer == OptimizerKind::SGD && config.weight_decay > 0.0) {
    for (const auto& e : registry.entries()) {
      const double lambda = decay_for(e, config);
      if (lambda > 0.0) objective = add(objective, mul(sum_squares(e.tensor), 0.5 * lambda));
    }
  }

  StepResult result;
  result.loss = objective.item();
  result.cross_entropy = ce.item();
  result.correct = count_correct(logits, batch.labels);
  if (!std::isfinite(result.loss)) {
    throw NumericError("non-finite training loss; first non-finite group: " +
                       first_nonfinite_group(registry));
  }

  objective.backward();

  for (const auto& e : registry.entries()) {
    if (!e.tensor.has_grad()) continue;
    double ss = 0.0;
    for (double g : e.tensor.grad()) ss += g * g;
    result.grad_norms[static_cast<std::size_t>(e.group)] += ss;
  }
  for (auto& n : result.grad_norms) n = std::sqrt(n);

  ++state.step;
  if (state.moments.size() != registry.size()) state.moments.resize(registry.size());
  for (std::size_t i = 0; i < registry.size(); ++i) {
    const auto& e = registry.entries()[i];
    if (!e.tensor.has_grad()) continue;
    Tensor handle = e.tensor;
    auto values = handle.mutable_data();
    auto grad = e.tensor.grad();
    if (config.optimizer == OptimizerKind::SGD) {
      sgd_update(values, grad, step_lr);
    } else {
      AdamWHyper hyper{step_lr, config.beta1, config.beta2, config.adam_eps,
                       decay_for(e, config)};
      adamw_update(values, grad, state.moments[i], state.step, hyper);
    }
  }
  registry.zero_grad();
  return result;
}

EvalResult evaluate(const Model& model, const Dataset& data,
                    std::span<const std::size_t> indices, std::size_t batch_size) {
  NoGradGuard guard;
  EvalResult result;
  result.count = indices.size();
  if (indices.empty()) return result;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < indices.size(); i += batch_size) {
    const auto n = std::min(batch_size, indices.size() - i);
    auto chunk = indices.subspan(i, n);
    const auto labels = data.labels_of(chunk);
    const auto logits = model.forward(data.images(chunk));
    loss_sum += cross_entropy(logits, labels).item() * static_cast<double>(n);
    correct += count_correct(logits, labels);
  }
  result.loss = loss_sum / static_cast<double>(indices.size());
  result.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  return result;
}

double scheduled_lr(const TrainConfig& config, std::size_t epoch) {
  if (config.lr_schedule == LrSchedule::Constant) return config.learning_rate;
  const double t = static_cast<double>(epoch) / static_cast<double>(config.epochs);
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

RunReport fit(Model& model, const Dataset& data, const TrainConfig& config,
              const FitOptions& options) {
  config.validate();
  const auto& mc = model.config();
  if (data.channels != mc.in_channels || data.height != mc.image_size ||
      data.width != mc.image_size) {
    throw ConfigError("dataset images [" + std::to_string(data.channels) + "x" +
                      std::to_string(data.height) + "x" + std::to_string(data.width) +
                      "] do not match the model input");
  }
  if (data.num_classes > mc.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) +
                      " classes but the model head has " + std::to_string(mc.num_classes));
  }
  if (data.train_idx.empty()) throw ConfigError("dataset has no training samples");

  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  report.config_digest = options.config_digest;
  report.seed = config.seed;
  OptimizerState state;
  double best = -1.0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = scheduled_lr(config, epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    const auto plan = batches(data.train_idx, config.batch_size, config.seed, epoch);
    for (const auto& idx : plan) {
      Batch batch{data.images(idx), data.labels_of(idx)};
      const auto step = train_step(model, batch, state, config, lr);
      rec.loss += step.loss;
      for (std::size_t g = 0; g < rec.grad_norms.size(); ++g) rec.grad_norms[g] += step.grad_norms[g];
    }
    const double steps = static_cast<double>(plan.size());
    rec.loss /= steps;
    for (auto& g : rec.grad_norms) g /= steps;
    rec.train_acc = evaluate(model, data, data.train_idx).accuracy;
    rec.val_acc = evaluate(model, data, data.val_idx).accuracy;
    report.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    if (rec.val_acc > best) {
      best = rec.val_acc;
      report.best_val_acc = rec.val_acc;
      report.best_epoch = epoch + 1;
      if (options.checkpoint_path) save_checkpoint(model, *options.checkpoint_path);
    }
    if (config.target_train_acc && rec.train_acc >= *config.target_train_acc) {
      report.reached_target = true;
      break;
    }
  }

  if (mc.embed.variant == Variant::FSNE) {
    report.codes = code_diagnostics(model.codes(0), options.config_digest);
  }
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

nlohmann::json report_to_json(const RunReport& report) {
  using nlohmann::json;
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    json norms = json::object();
    for (auto g : kAllGroups) norms[std::string(group_name(g))] = e.grad_norms[static_cast<std::size_t>(g)];
    epochs.push_back({{"epoch", e.epoch},
                      {"loss", e.loss},
                      {"train_acc", e.train_acc},
                      {"val_acc", e.val_acc},
                      {"lr", e.lr},
                      {"grad_norm", norms}});
  }
  json codes = nullptr;
  if (report.codes) {
    codes = {{"correlation", report.codes->correlation},
             {"norms", report.codes->norms},
             {"source_digest", report.codes->source_digest}};
  }
  return {{"metadata",
           {{"config_digest", report.config_digest},
            {"seed", report.seed},
            {"tool_version", std::string(version())}}},
          {"epochs", epochs},
          {"code_diagnostics", codes},
          {"best_val_acc", report.best_val_acc},
          {"best_epoch", report.best_epoch},
          {"reached_target", report.reached_target},
          {"wall_time_s", report.wall_time_s}};
}

void write_report_csv(const RunReport& report, std::ostream& out) {
  out << "# config_digest=" << report.config_digest << "\n";
  out << "# seed=" << report.seed << "\n";
  out << "# tool_version=" << std::string(version()) << "\n";
  out << "epoch,loss,train_acc,val_acc";
  for (auto g : kAllGroups) out << ",grad_norm_" << group_name(g);
  out << ",lr\n";
  const auto old_precision = out.precision(17);
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << e.loss << ',' << e.train_acc << ',' << e.val_acc;
    for (double g : e.grad_norms) out << ',' << g;
    out << ',' << e.lr << "\n";
  }
  out.precision(old_precision);
}

}  // namespace qkv

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "qkv/errors.hpp"
#include "qkv/ops.hpp"
#include "qkv/random.hpp"

namespace qkv {

namespace {

// Richardson estimates (4 D(h/2) - D(h)) / 3 from adjacent steps, each scored
// by its largest disagreement with a neighbouring estimate; the best-scored
// estimate wins. Truncation error dominates at large steps and rounding
// noise at small ones, so neighbours agree best in between.
std::optional<double> pick_estimate(const std::vector<std::optional<double>>& d) {
  if (d.size() == 1) return d[0];
  std::vector<std::optional<double>> r(d.size() - 1);
  for (std::size_t j = 0; j + 1 < d.size(); ++j) {
    if (d[j] && d[j + 1]) r[j] = (4.0 * *d[j + 1] - *d[j]) / 3.0;
  }
  std::optional<double> best;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < r.size(); ++j) {
    if (!r[j]) continue;
    double score = -1.0;
    if (j > 0 && r[j - 1]) score = std::max(score, std::abs(*r[j] - *r[j - 1]));
    if (j + 1 < r.size() && r[j + 1]) score = std::max(score, std::abs(*r[j] - *r[j + 1]));
    if (score < 0.0) score = std::numeric_limits<double>::max();
    if (!best || score < best_score) {
      best = r[j];
      best_score = score;
    }
  }
  return best;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn,
                           std::span<const Tensor> params,
                           const GradCheckOptions& options,
                           std::span<const std::string> names) {
  if (!(options.eps > 0.0)) throw Error("grad_check: eps must be positive");
  if (options.step_ladder < 1) throw Error("grad_check: step_ladder must be at least 1");

  auto eval = [&] {
    NoGradGuard guard;
    return loss_fn().item();
  };
  auto eval_pattern = [&](std::uint64_t& pattern) {
    NoGradGuard guard;
    ReluPattern probe;
    const double v = loss_fn().item();
    pattern = probe.digest();
    return v;
  };
  const double first = eval();
  const double second = eval();
  if (first != second) {
    throw DeterminismError("grad_check: loss_fn returned " +
                           std::to_string(first) + " then " +
                           std::to_string(second) + " for identical inputs");
  }

  std::vector<Tensor> handles(params.begin(), params.end());
  for (auto& p : handles) p.zero_grad();
  loss_fn().backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(handles.size());
  for (auto& p : handles) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
    p.zero_grad();
  }

  std::uint64_t at = 0;
  eval_pattern(at);

  // Steps eps * 2^j for j = (n-1)/2 down to -(n-1)/2.
  std::vector<double> steps;
  const int n = static_cast<int>(options.step_ladder);
  for (int j = (n - 1) / 2; j > (n - 1) / 2 - n; --j) steps.push_back(std::ldexp(options.eps, j));

  GradCheckResult result;
  Rng rng(options.seed);
  for (std::size_t t = 0; t < handles.size(); ++t) {
    Tensor& p = handles[t];
    std::vector<std::size_t> pool(p.numel());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    if (pool.size() > options.samples_per_tensor) rng.shuffle(std::span<std::size_t>(pool));
    auto values = p.mutable_data();
    std::size_t checked = 0;
    for (std::size_t k = 0; k < pool.size() && checked < options.samples_per_tensor; ++k) {
      const std::size_t i = pool[k];
      const double orig = values[i];
      // Central differences over a ladder of steps; a step whose probes
      // change a relu's linear piece is unusable.
      std::vector<std::optional<double>> diffs;
      for (double h : steps) {
        std::uint64_t up = 0, down = 0;
        values[i] = orig + h;
        const double plus = eval_pattern(up);
        values[i] = orig - h;
        const double minus = eval_pattern(down);
        values[i] = orig;
        if (up != at || down != at) {
          diffs.emplace_back();
        } else {
          diffs.emplace_back((plus - minus) / (2.0 * h));
        }
      }
      const std::optional<double> numeric_value = pick_estimate(diffs);
      if (!numeric_value) {
        ++result.kinks_skipped;
        continue;
      }
      ++checked;

      const double numeric = *numeric_value;
      const double ad = analytic[t][i];
      const double denom = std::max({std::abs(ad), std::abs(numeric), 1e-8});
      const double rel = std::abs(ad - numeric) / denom;
      ++result.elements_checked;
      if (result.worst_param.empty() || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_param = t < names.size() ? names[t] : "param" + std::to_string(t);
        result.worst_index = i;
        result.worst_autodiff = ad;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace qkv

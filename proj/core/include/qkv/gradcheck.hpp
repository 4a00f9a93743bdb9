// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qkv/tensor.hpp"

namespace qkv {

struct GradCheckOptions {
  /// Middle step of the ladder.
  double eps = 1e-4;
  /// Number of central-difference steps eps * 2^j, centred on eps. With
  /// more than one step, Richardson extrapolations of adjacent steps are
  /// compared and the one agreeing best with its neighbours is used. 1
  /// gives a plain central difference.
  std::size_t step_ladder = 7;
  /// Elements probed per tensor; tensors at or below this size are probed fully.
  std::size_t samples_per_tensor = 64;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_autodiff = 0.0;
  double worst_numeric = 0.0;
  std::size_t elements_checked = 0;
  /// Elements with no usable step: every probe changed some relu's linear
  /// piece. They are not compared; sampled tensors draw a replacement.
  std::size_t kinks_skipped = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences.
///
/// The relative error of one element is
/// |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8). `loss_fn` is evaluated twice up
/// front and must return bitwise-identical values, otherwise
/// DeterminismError is thrown. Steps whose probes straddle a relu kink are
/// discarded. Parameter gradients are cleared on return.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn,
                           std::span<const Tensor> params,
                           const GradCheckOptions& options = {},
                           std::span<const std::string> names = {});

}  // namespace qkv

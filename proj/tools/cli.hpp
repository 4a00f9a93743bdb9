// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstddef>
#include <iosfwd>

#include "qkv/config.hpp"
#include "qkv/gradcheck.hpp"

namespace qkv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Largest relative error grad-check accepts.
inline constexpr double kGradCheckTolerance = 1e-4;

/// Entry point of the qkvembed tool. Never throws; errors become exit codes.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

enum class ProbePoint {
  Init,    ///< the model exactly as initialized from train.seed
  Generic  ///< Model::randomize(train.seed), gain 1
};

/// Cross-entropy of the config's model on the first `batch` training samples,
/// checked against finite differences over every parameter.
GradCheckResult model_grad_check(const RunConfig& config, const GradCheckOptions& options,
                                 ProbePoint point = ProbePoint::Generic, std::size_t batch = 4);

}  // namespace qkv::cli

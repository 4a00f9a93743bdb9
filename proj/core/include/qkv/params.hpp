// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qkv/tensor.hpp"

namespace qkv {

enum class ParamGroup { Patch, Positional, EmbedQkv, Codes, Attention, Ffn, Norm, Head };

inline constexpr std::array<ParamGroup, 8> kAllGroups = {
    ParamGroup::Patch, ParamGroup::Positional, ParamGroup::EmbedQkv,
    ParamGroup::Codes, ParamGroup::Attention,  ParamGroup::Ffn,
    ParamGroup::Norm,  ParamGroup::Head};

std::string_view group_name(ParamGroup group);

enum class Init { TruncNormal, Zeros, Ones };

/// Declarative description of one trainable tensor. Models are laid out as
/// a list of specs first, so counting never needs to allocate weights.
struct ParamSpec {
  std::string name;
  Shape shape;
  ParamGroup group = ParamGroup::EmbedQkv;
  Init init = Init::TruncNormal;
};

inline constexpr double kInitStd = 0.02;

/// Allocates and initializes a spec. The draw stream depends only on
/// (seed, spec.name), so one tensor can be re-initialized in isolation.
Tensor materialize(const ParamSpec& spec, std::uint64_t seed);

struct ParamCounts {
  std::array<std::size_t, kAllGroups.size()> by_group{};
  std::size_t total = 0;

  std::size_t operator[](ParamGroup g) const {
    return by_group[static_cast<std::size_t>(g)];
  }
};

ParamCounts count_specs(std::span<const ParamSpec> specs);

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

/// Ordered inventory of trainable tensors. Storage shared by several modules
/// is listed once, under the name it was first registered with.
class ParamRegistry {
 public:
  /// Returns false (and records nothing) when the storage is already present.
  bool add(std::string name, Tensor tensor, ParamGroup group);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const ParamEntry* find(std::string_view name) const;
  /// Throws IndexError for unknown names.
  const Tensor& get(std::string_view name) const;

  ParamCounts counts() const;
  std::vector<Tensor> tensors() const;
  std::vector<std::string> names() const;
  void zero_grad();

 private:
  std::vector<ParamEntry> entries_;
};

}  // namespace qkv

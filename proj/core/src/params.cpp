// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/params.hpp"

#include <algorithm>

#include "qkv/errors.hpp"
#include "qkv/random.hpp"

namespace qkv {

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::Patch: return "patch";
    case ParamGroup::Positional: return "positional";
    case ParamGroup::EmbedQkv: return "embed_qkv";
    case ParamGroup::Codes: return "codes";
    case ParamGroup::Attention: return "attention";
    case ParamGroup::Ffn: return "ffn";
    case ParamGroup::Norm: return "norm";
    case ParamGroup::Head: return "head";
  }
  return "unknown";
}

Tensor materialize(const ParamSpec& spec, std::uint64_t seed) {
  std::vector<double> values(shape_numel(spec.shape), 0.0);
  switch (spec.init) {
    case Init::TruncNormal: {
      Rng rng(mix_seed(seed, spec.name));
      for (auto& v : values) v = rng.truncated_normal(kInitStd);
      break;
    }
    case Init::Ones:
      std::fill(values.begin(), values.end(), 1.0);
      break;
    case Init::Zeros:
      break;
  }
  return Tensor(spec.shape, std::move(values), /*requires_grad=*/true);
}

ParamCounts count_specs(std::span<const ParamSpec> specs) {
  ParamCounts counts;
  for (const auto& s : specs) {
    const auto n = shape_numel(s.shape);
    counts.by_group[static_cast<std::size_t>(s.group)] += n;
    counts.total += n;
  }
  return counts;
}

bool ParamRegistry::add(std::string name, Tensor tensor, ParamGroup group) {
  for (const auto& e : entries_) {
    if (e.tensor.same_storage(tensor)) return false;
    if (e.name == name) {
      throw Error("parameter name registered twice: " + name);
    }
  }
  entries_.push_back({std::move(name), std::move(tensor), group});
  return true;
}

const ParamEntry* ParamRegistry::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const Tensor& ParamRegistry::get(std::string_view name) const {
  if (const auto* e = find(name)) return e->tensor;
  throw IndexError("unknown parameter '" + std::string(name) + "'");
}

ParamCounts ParamRegistry::counts() const {
  ParamCounts counts;
  for (const auto& e : entries_) {
    counts.by_group[static_cast<std::size_t>(e.group)] += e.tensor.numel();
    counts.total += e.tensor.numel();
  }
  return counts;
}

std::vector<Tensor> ParamRegistry::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

std::vector<std::string> ParamRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

void ParamRegistry::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

}  // namespace qkv

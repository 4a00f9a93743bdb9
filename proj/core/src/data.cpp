// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "qkv/errors.hpp"
#include "qkv/random.hpp"
#include "qkv/util.hpp"

namespace qkv {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

double frac(double x) { return x - std::floor(x); }

double blob(double u, double v, double cu, double cv) {
  const double s = 0.15;
  return std::exp(-((u - cu) * (u - cu) + (v - cv) * (v - cv)) / (2 * s * s));
}

double pattern(std::size_t k, double u, double v) {
  auto on = [](bool b) { return b ? 1.0 : 0.0; };
  switch (k) {
    case 0: return on(frac(2 * v) < 0.5);
    case 1: return on(frac(2 * u) < 0.5);
    case 2: return on(frac(u + v) < 0.5);
    case 3: return on(frac(u - v + 1) < 0.5);
    case 4: return on(static_cast<int>(std::floor(2 * u) + std::floor(2 * v)) % 2 == 0);
    case 5: return blob(u, v, 0.5, 0.5);
    case 6: return blob(u, v, 0.25, 0.25);
    case 7: return blob(u, v, 0.75, 0.75);
    case 8: return on(frac(4 * v) < 0.5);
    case 9: return on(frac(4 * u) < 0.5);
    case 10: return on(static_cast<int>(std::floor(4 * u) + std::floor(4 * v)) % 2 == 0);
    case 11: return on(std::abs(std::hypot(u - 0.5, v - 0.5) - 0.3) < 0.1);
    case 12: return on(v < 0.5);
    case 13: return on(u < 0.5);
    case 14: return on(std::abs(u - 0.5) < 0.1 || std::abs(v - 0.5) < 0.1);
    case 15: return blob(u, v, 0.75, 0.25);
  }
  throw IndexError("archetype index " + std::to_string(k) + " outside [0, 16)");
}

std::vector<std::size_t> split_indices(std::size_t m, std::uint64_t seed,
                                       std::vector<std::size_t>& val) {
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, "split"));
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_val = m / 5;
  val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return train;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  }
  return v;
}

}  // namespace

std::vector<std::size_t> Dataset::all_indices() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

Tensor Dataset::images(std::span<const std::size_t> indices) const {
  const std::size_t per = image_numel();
  std::vector<double> out;
  out.reserve(indices.size() * per);
  for (auto i : indices) {
    if (i >= size()) throw IndexError("sample index " + std::to_string(i) + " out of range");
    auto first = pixels.begin() + static_cast<std::ptrdiff_t>(i * per);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(per));
  }
  return Tensor({indices.size(), channels, height, width}, std::move(out));
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= size()) throw IndexError("sample index " + std::to_string(i) + " out of range");
    out.push_back(labels[i]);
  }
  return out;
}

Tensor archetype(std::size_t k, std::size_t image_size) {
  std::vector<double> px(image_size * image_size);
  const double s = static_cast<double>(image_size);
  for (std::size_t y = 0; y < image_size; ++y)
    for (std::size_t x = 0; x < image_size; ++x)
      px[y * image_size + x] = pattern(k, (static_cast<double>(x) + 0.5) / s,
                                       (static_cast<double>(y) + 0.5) / s);
  return Tensor({1, image_size, image_size}, std::move(px));
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2 || spec.num_classes > 16) {
    throw ConfigError("synthetic num_classes must lie in [2, 16], got " +
                      std::to_string(spec.num_classes));
  }
  if (spec.num_samples < 10 * spec.num_classes) {
    throw ConfigError("synthetic num_samples must be at least 10 per class");
  }
  if (spec.image_size < 8) throw ConfigError("synthetic image_size must be at least 8");
  if (!(spec.noise >= 0.0)) throw ConfigError("synthetic noise must be non-negative");

  Dataset ds;
  ds.channels = 1;
  ds.height = ds.width = spec.image_size;
  ds.num_classes = spec.num_classes;
  ds.provenance = "synthetic:seed=" + std::to_string(spec.seed);

  std::vector<Tensor> protos;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    protos.push_back(archetype(k, spec.image_size));
  }

  ds.labels.resize(spec.num_samples);
  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    ds.labels[i] = static_cast<int>(i % spec.num_classes);
  }
  Rng rng(mix_seed(spec.seed, "synthetic"));
  rng.shuffle(std::span<int>(ds.labels));

  const std::size_t per = ds.image_numel();
  ds.pixels.resize(spec.num_samples * per);
  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    auto proto = protos[static_cast<std::size_t>(ds.labels[i])].data();
    for (std::size_t j = 0; j < per; ++j) {
      const double noise = spec.noise > 0.0 ? rng.uniform(-spec.noise, spec.noise) : 0.0;
      ds.pixels[i * per + j] = std::clamp(proto[j] + noise, 0.0, 1.0);
    }
  }
  ds.train_idx = split_indices(spec.num_samples, spec.seed, ds.val_idx);
  return ds;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::uint64_t split_seed) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (img.size() < 4) throw IdxTruncatedError(images_path.string() + ": missing magic");
  if (read_be32(img, 0) != kIdxImagesMagic) {
    throw IdxMagicError(images_path.string() + ": bad magic, expected 0x00000803");
  }
  if (lab.size() < 4) throw IdxTruncatedError(labels_path.string() + ": missing magic");
  if (read_be32(lab, 0) != kIdxLabelsMagic) {
    throw IdxMagicError(labels_path.string() + ": bad magic, expected 0x00000801");
  }
  if (img.size() < 16) throw IdxTruncatedError(images_path.string() + ": truncated header");
  if (lab.size() < 8) throw IdxTruncatedError(labels_path.string() + ": truncated header");

  const std::size_t m = read_be32(img, 4);
  const std::size_t h = read_be32(img, 8);
  const std::size_t w = read_be32(img, 12);
  const std::size_t m_labels = read_be32(lab, 4);
  if (m != m_labels) {
    throw IdxLengthError("IDX image count " + std::to_string(m) +
                         " differs from label count " + std::to_string(m_labels));
  }
  if (img.size() < 16 + m * h * w) {
    throw IdxTruncatedError(images_path.string() + ": pixel data truncated");
  }
  if (lab.size() < 8 + m) {
    throw IdxTruncatedError(labels_path.string() + ": label data truncated");
  }

  Dataset ds;
  ds.channels = 1;
  ds.height = h;
  ds.width = w;
  ds.pixels.resize(m * h * w);
  for (std::size_t i = 0; i < ds.pixels.size(); ++i) {
    ds.pixels[i] = static_cast<unsigned char>(img[16 + i]) / 255.0;
  }
  ds.labels.resize(m);
  int max_label = 0;
  for (std::size_t i = 0; i < m; ++i) {
    ds.labels[i] = static_cast<unsigned char>(lab[8 + i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
  ds.provenance = "idx:" + hex_digest(img + lab);
  ds.train_idx = split_indices(m, split_seed, ds.val_idx);
  return ds;
}

std::vector<std::vector<std::size_t>> batches(std::span<const std::size_t> split,
                                              std::size_t batch_size,
                                              std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  std::vector<std::size_t> order(split.begin(), split.end());
  Rng rng(mix_seed(seed, epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const auto end = std::min(order.size(), i + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace qkv

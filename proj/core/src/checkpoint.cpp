// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "qkv/config.hpp"
#include "qkv/errors.hpp"
#include "qkv/util.hpp"

namespace qkv {

namespace {

constexpr char kMagic[8] = {'Q', 'K', 'V', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  const std::string& buffer() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return bytes(u32()); }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw CheckpointError("corrupt checkpoint: truncated at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string data_;
  std::size_t pos_ = 0;
};

struct StoredEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Stored {
  std::string digest;
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<StoredEntry> entries;
};

Stored read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(std::string{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});

  if (r.bytes(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
    throw CheckpointError("corrupt checkpoint: bad magic in " + path.string());
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Stored s;
  s.digest = r.str();
  const auto config_text = r.str();
  if (hex_digest(config_text) != s.digest) {
    throw CheckpointError("corrupt checkpoint: config digest does not match header");
  }
  try {
    s.config = model_config_from_json(nlohmann::json::parse(config_text));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: bad config JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
  s.seed = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredEntry e;
    e.name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw CheckpointError("corrupt checkpoint: rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u64());
    const auto n = shape_numel(e.shape);
    e.values.resize(n);
    for (auto& v : e.values) v = r.f64();
    s.entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw CheckpointError("corrupt checkpoint: trailing bytes");
  return s;
}

void restore(Model& model, const Stored& stored, bool skip_head) {
  auto& reg = model.params();
  if (stored.entries.size() != reg.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(stored.entries.size()) +
                          " tensors, model expects " + std::to_string(reg.size()));
  }
  for (const auto& e : stored.entries) {
    const auto* entry = reg.find(e.name);
    if (!entry) throw CheckpointError("checkpoint tensor '" + e.name + "' unknown to model");
    if (skip_head && entry->group == ParamGroup::Head) continue;
    if (entry->tensor.shape() != e.shape) {
      throw CheckpointError("checkpoint tensor '" + e.name + "' has shape " +
                            shape_str(e.shape) + ", model expects " +
                            shape_str(entry->tensor.shape()));
    }
    Tensor dst = entry->tensor;
    std::copy(e.values.begin(), e.values.end(), dst.mutable_data().begin());
  }
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  Writer w;
  w.bytes(std::string_view(kMagic, sizeof kMagic));
  w.u32(kCheckpointVersion);
  const auto config_text = to_json(model.config()).dump();
  w.str(hex_digest(config_text));
  w.str(config_text);
  w.u64(model.seed());
  const auto& entries = model.params().entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) w.u64(d);
    for (double v : e.tensor.data()) w.f64(v);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  const auto stored = read_all(path);
  Model model(stored.config, stored.seed);
  restore(model, stored, false);
  return model;
}

Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected,
                      LoadMode mode, std::uint64_t head_seed) {
  const auto stored = read_all(path);
  if (mode == LoadMode::Strict) {
    if (model_config_digest(expected) != stored.digest) {
      throw DigestMismatchError("checkpoint config digest " + stored.digest +
                                " does not match expected " +
                                model_config_digest(expected));
    }
    Model model(stored.config, stored.seed);
    restore(model, stored, false);
    return model;
  }
  ModelConfig relabelled = expected;
  relabelled.num_classes = stored.config.num_classes;
  if (model_config_digest(relabelled) != stored.digest) {
    throw DigestMismatchError(
        "transfer load: configs may differ only in num_classes (stored digest " +
        stored.digest + ")");
  }
  Model model(expected, head_seed);
  restore(model, stored, true);
  return model;
}

std::string checkpoint_digest(const std::filesystem::path& path) {
  return read_all(path).digest;
}

}  // namespace qkv

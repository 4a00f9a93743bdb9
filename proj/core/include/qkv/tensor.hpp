// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qkv {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

/// One recorded operation. `backward` receives the gradient of the op output
/// and accumulates into the buffers of inputs that require grad; buffers of
/// inputs that do not require grad are passed as nullptr.
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(std::span<const double> grad_out,
                     std::span<std::vector<double>*> grad_in)>
      backward;
  bool released = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;
  std::shared_ptr<Node> grad_fn;
};

}  // namespace detail

/// Dense row-major f64 tensor with an optional gradient slot.
///
/// Tensor is a shared handle: copies alias the same storage, which is how
/// weight sharing between embedding streams and encoder blocks is expressed.
/// Tensors produced by ops while grad mode is enabled remember the op that
/// produced them; `backward()` on a scalar walks that record in reverse
/// topological order and accumulates into leaf gradients.
class Tensor {
 public:
  Tensor() = default;

  /// Builds a tensor from explicit values. Throws DimensionError if the value
  /// count disagrees with the shape and NumericError on non-finite input.
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of the values. Intended for parameters and test fixtures;
  /// writing into a tensor that is part of a live graph invalidates it.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  /// Gradient values; throws GradStateError if none is populated.
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Leaf gradients must be cleared
  /// with zero_grad() beforehand; a graph can be traversed only once.
  void backward() const;

  /// New leaf holding a copy of the values.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  /// Number of op records reachable from this tensor.
  std::size_t graph_size() const;

  /// Internal: wraps op output, recording `node` if any input needs grad.
  static Tensor from_op(Shape shape, std::vector<double> values,
                        std::shared_ptr<detail::Node> node);
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  detail::TensorImpl& checked() const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// True while ops record graph nodes on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Throws NumericError naming `context` if any value is NaN or infinite.
void check_finite(const Tensor& t, const std::string& context);

}  // namespace qkv

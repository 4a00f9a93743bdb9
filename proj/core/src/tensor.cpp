// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include "qkv/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "qkv/errors.hpp"

namespace qkv {

namespace {

thread_local bool g_grad_enabled = true;

using detail::Node;
using detail::TensorImpl;

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(what) + ": non-finite value in tensor");
    }
  }
}

// Post-order over op records reachable from `root`, inputs before outputs.
std::vector<TensorImpl*> topo_order(TensorImpl* root) {
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto& fn = impl->grad_fn;
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }
  return order;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  require_finite(values, "Tensor");
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

TensorImpl& Tensor::checked() const {
  if (!impl_) throw Error("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) {
    throw IndexError("dim " + std::to_string(i) + " out of range for shape " +
                     shape_str(s));
  }
  return s[i];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::data() const { return checked().data; }

std::span<double> Tensor::mutable_data() { return checked().data; }

double Tensor::item() const {
  const auto& impl = checked();
  if (impl.data.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(impl.shape));
  }
  return impl.data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  const auto& impl = checked();
  if (impl.shape.size() != 2 || i >= impl.shape[0] || j >= impl.shape[1]) {
    throw IndexError("at(" + std::to_string(i) + ", " + std::to_string(j) +
                     ") on tensor of shape " + shape_str(impl.shape));
  }
  return impl.data[i * impl.shape[1] + j];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  auto& impl = checked();
  if (impl.grad_fn) {
    throw GradStateError("requires_grad can only be set on leaf tensors");
  }
  impl.requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return checked().grad_fn == nullptr; }

bool Tensor::has_grad() const { return checked().grad.has_value(); }

std::span<const double> Tensor::grad() const {
  const auto& impl = checked();
  if (!impl.grad) throw GradStateError("tensor has no gradient populated");
  return *impl.grad;
}

void Tensor::zero_grad() { checked().grad.reset(); }

Tensor Tensor::detach() const {
  const auto& impl = checked();
  auto out = std::make_shared<TensorImpl>();
  out->shape = impl.shape;
  out->data = impl.data;
  return Tensor(std::move(out));
}

std::size_t Tensor::graph_size() const {
  std::size_t n = 0;
  for (auto* impl : topo_order(&checked())) {
    if (impl->grad_fn) ++n;
  }
  return n;
}

Tensor Tensor::from_op(Shape shape, std::vector<double> values,
                       std::shared_ptr<Node> node) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  if (node && g_grad_enabled) {
    bool any = false;
    for (const auto& in : node->inputs) any = any || in->requires_grad;
    if (any) {
      impl->requires_grad = true;
      impl->grad_fn = std::move(node);
    }
  }
  return Tensor(std::move(impl));
}

void Tensor::backward() const {
  auto& root = checked();
  if (root.data.size() != 1) {
    throw DimensionError("backward needs a scalar seed, got shape " +
                         shape_str(root.shape));
  }
  if (!root.requires_grad) {
    throw GradStateError("backward on a tensor that does not require grad");
  }

  auto order = topo_order(&root);
  for (auto* impl : order) {
    if (impl->grad_fn && impl->grad_fn->released) {
      throw UnsupportedError(
          "graph already traversed by a previous backward; double backward "
          "is not supported");
    }
    if (!impl->grad_fn && impl->grad) {
      throw GradStateError(
          "leaf already holds a gradient; call zero_grad() before backward");
    }
  }

  std::unordered_map<TensorImpl*, std::vector<double>> grads;
  grads[&root] = std::vector<double>{1.0};
  std::vector<std::vector<double>*> slots;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (!impl->grad_fn) continue;
    auto found = grads.find(impl);
    if (found == grads.end()) continue;
    Node& node = *impl->grad_fn;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      TensorImpl* in = node.inputs[i].get();
      if (!in->requires_grad) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      slots[i] = &buf;
    }
    node.backward(found->second, slots);
    grads.erase(impl);
  }

  for (auto* impl : order) {
    if (impl->grad_fn) {
      impl->grad_fn->released = true;
      impl->grad_fn->backward = nullptr;
      impl->grad_fn->inputs.clear();
    } else if (impl->requires_grad) {
      auto found = grads.find(impl);
      if (found != grads.end()) {
        impl->grad = std::move(found->second);
      } else {
        impl->grad = std::vector<double>(impl->data.size(), 0.0);
      }
    }
  }
  // Root keeps its (released) node so a second backward is detected.
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void check_finite(const Tensor& t, const std::string& context) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(context + ": non-finite value detected");
    }
  }
}

}  // namespace qkv

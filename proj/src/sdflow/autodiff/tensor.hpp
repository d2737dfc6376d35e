// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdflow/common/error.hpp"

namespace sdflow::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major array with an optional gradient buffer.
//
// A Tensor is a handle: copies share storage, the same way parameters are
// shared between a network and the graph that differentiates it. Use clone()
// for an independent deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    for (std::size_t extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
    }
    s_->data.assign(numel_of(shape), T(0));
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : Tensor(std::move(shape), requires_grad) {
    if (values.size() != s_->data.size()) {
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(s_->shape));
    }
    s_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.s_->data.begin(), t.s_->data.end(), value);
    return t;
  }
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T* ptr() { return s_->data.data(); }
  const T* ptr() const { return s_->data.data(); }
  std::vector<T>& values() { return s_->data; }
  const std::vector<T>& values() const { return s_->data; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return s_->data[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  bool has_grad() const { return !s_->grad.empty(); }
  // Gradient buffer, allocated as zeros on first access. Handle semantics:
  // a const handle still refers to mutable shared storage.
  std::span<T> grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
    return s_->grad;
  }
  void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), T(0)); }
  void clear_grad() const { s_->grad.clear(); }

  Tensor clone() const {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = s_->shape;
    t.s_->data = s_->data;
    return t;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

// Ordered record of the primitive operations applied to tracked tensors.
// Nodes are appended as operations execute, so every node's inputs were
// produced by earlier nodes; backward() replays them once, newest first.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  // True when an op over these inputs must be recorded.
  template <typename... Ts>
  bool tracks(const Ts&... inputs) const {
    return recording_ && (... || inputs.requires_grad());
  }

  void record(const char* op, std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(backward)});
  }

  std::size_t size() const { return nodes_.size(); }
  const char* op_name(std::size_t i) const { return nodes_.at(i).op; }

  void backward(Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward() needs a scalar loss");
    }
    if (!loss.requires_grad()) {
      throw ContractError("backward() on a loss that does not depend on tracked tensors");
    }
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    clear();
  }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    const char* op;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool recording_;
};

}  // namespace sdflow::ad

/* Copyright 2026 The AudioMamba Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "amba/errors.hpp"

namespace amba {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename T>
using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  Vec<T> value;
  Vec<T> grad;  // empty until an adjoint reaches this node
  bool requires_grad = false;

  void accumulate(const Vec<T>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

}  // namespace detail

/// Dense row-major array of `T` that can participate in reverse-mode
/// differentiation. Copies are shallow: two Tensor handles may refer to the
/// same node, which is how the tape reaches parameters owned by a model.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  Tensor(Shape shape, Vec<T> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor filled(const Shape& shape, T value);
  static Tensor scalar(T value);
  static Tensor from_matrix(const RowMat<T>& m);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const;
  Index size() const { return node_->value.size(); }

  const Vec<T>& values() const { return node_->value; }
  /// In-place access for initialisation and optimizer updates. Never call
  /// this between a forward pass and its backward pass.
  Vec<T>& mutable_values() { return node_->value; }
  T item() const;

  /// Rank-2 view (rank-1 tensors are viewed as a single row).
  Eigen::Map<const RowMat<T>> matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Vec<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0); }

  /// Value copy cut from the tape.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape(), values().template cast<U>());
  }

  const std::shared_ptr<detail::Node<T>>& handle() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

/// Ordered record of adjoint closures for the current thread. Each
/// differentiable op that produces a grad-requiring output appends one entry;
/// `backward` replays them in reverse exactly once and clears the record.
template <typename T>
class Tape {
 public:
  static Tape& current();

  void record(std::function<void()> adjoint);
  void backward(const Tensor<T>& loss);
  /// Drops any recorded entries and re-arms backward.
  void reset();
  std::size_t size() const { return entries_.size(); }
  bool spent() const { return spent_; }

 private:
  std::vector<std::function<void()>> entries_;
  bool spent_ = false;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>::current().backward(loss);
}

/// True unless a NoGradGuard is alive on this thread.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_mode_enabled()) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace amba

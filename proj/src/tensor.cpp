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

#include "amba/tensor.hpp"

#include <numeric>
#include <sstream>

namespace amba {

Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         [](Index a, Index b) { return a * b; });
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Vec<T> values, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
  for (Index e : shape) {
    if (e < 1) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, Vec<T>::Zero(numel(shape)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::filled(const Shape& shape, T value) {
  return Tensor(shape, Vec<T>::Constant(numel(shape), value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor({1}, Vec<T>::Constant(1, value));
}

template <typename T>
Tensor<T> Tensor<T>::from_matrix(const RowMat<T>& m) {
  Vec<T> v(m.size());
  Eigen::Map<RowMat<T>>(v.data(), m.rows(), m.cols()) = m;
  return Tensor({m.rows(), m.cols()}, std::move(v));
}

template <typename T>
Index Tensor<T>::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw UsageError("item() on non-scalar tensor " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
Eigen::Map<const RowMat<T>> Tensor<T>::matrix() const {
  if (rank() == 1) return {node_->value.data(), 1, dim(0)};
  if (rank() != 2) throw ShapeError("matrix view needs rank <= 2, got " + shape_string(shape()));
  return {node_->value.data(), dim(0), dim(1)};
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), values());
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tape<T>& Tape<T>::current() {
  thread_local Tape<T> tape;
  return tape;
}

template <typename T>
void Tape<T>::record(std::function<void()> adjoint) {
  entries_.push_back(std::move(adjoint));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (spent_) throw UsageError("backward called again without resetting the tape");
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward needs a scalar loss, got " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) throw UsageError("loss is not connected to the tape");
  loss.handle()->accumulate(Vec<T>::Ones(1));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
  spent_ = true;
}

template <typename T>
void Tape<T>::reset() {
  entries_.clear();
  spent_ = false;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace amba

// Copyright 2026 The Respira Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense tensors with reverse-mode differentiation.
//
// A tensor is a cheap handle to shared storage. Operations that take at
// least one input requiring gradients record a backward closure on their
// output; backward() walks the resulting DAG in reverse topological order
// and accumulates into every tensor that requires gradients, leaf or not.
// The engine has no general broadcasting: element-wise ops require equal
// shapes, and matmul only broadcasts leading batch dimensions.
//
// Production code uses float32 (`Tensor`). The same op code is also
// instantiated for double (`TensorD`), which finite-difference checks use
// to get below float32's rounding floor.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace respira {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorImpl;

/// Backward closure: receives the gradient of the op output and must
/// accumulate into the inputs it captured.
template <typename T>
using BackwardFn = std::function<void(std::span<const T> grad_out)>;

template <typename T>
struct Node {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  BackwardFn<T> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<T>> storage;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  std::span<T> accumulate_target();
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t ndim() const { return static_cast<std::int64_t>(shape().size()); }
  /// Size of dimension `axis`; negative axes count from the end.
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const;

  std::span<const T> data() const;
  /// Mutable view of the storage. Writing into a tensor that already
  /// participates in a recorded graph invalidates that graph.
  std::span<T> mutable_data();
  std::vector<T> to_vector() const;
  T item() const;
  T at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  BasicTensor& set_requires_grad(bool flag);
  /// Accumulated gradient; empty until a backward pass reaches this tensor.
  std::span<const T> grad() const;
  bool has_grad() const;
  void zero_grad();

  /// Reverse-mode sweep from a single-element tensor (seed gradient 1).
  void backward() const;
  /// Reverse-mode sweep seeded with an explicit output gradient.
  void backward(std::span<const T> seed) const;

  /// Shares storage, drops the graph and gradient tracking.
  BasicTensor detach() const;
  /// Deep copy without graph.
  BasicTensor clone() const;
  /// Element-wise conversion to another scalar type, without graph.
  template <typename U>
  BasicTensor<U> cast() const {
    const auto d = data();
    return BasicTensor<U>::from(shape(), std::vector<U>(d.begin(), d.end()));
  }

  bool all_finite() const;

  // Graph construction hooks for ops.
  static BasicTensor make_result(Shape shape, std::vector<T> values, std::initializer_list<const BasicTensor*> inputs,
                                 detail::BackwardFn<T> backward);
  static BasicTensor make_result(Shape shape, std::vector<T> values, const std::vector<BasicTensor>& inputs,
                                 detail::BackwardFn<T> backward);
  /// Gradient buffer of an input captured by a backward closure; empty when
  /// that input does not require gradients.
  static std::span<T> grad_sink(const std::shared_ptr<Impl>& impl);
  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  explicit BasicTensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace respira

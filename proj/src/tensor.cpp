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

#include "respira/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "respira/error.hpp"

namespace respira {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
std::span<T> detail::TensorImpl<T>::accumulate_target() {
  if (!requires_grad) return {};
  if (grad.empty()) grad.assign(storage->size(), T{0});
  return grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), T{0}, requires_grad); }

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->storage = std::make_shared<std::vector<T>>(std::move(values));
  impl->requires_grad = requires_grad;
  return BasicTensor(std::move(impl));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) { return from({}, {value}, requires_grad); }

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->shape;
}

template <typename T>
std::int64_t BasicTensor<T>::dim(std::int64_t axis) const {
  const auto& s = shape();
  const auto n = static_cast<std::int64_t>(s.size());
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

template <typename T>
std::int64_t BasicTensor<T>::numel() const { return static_cast<std::int64_t>(data().size()); }

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return *impl_->storage;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_data() {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return *impl_->storage;
}

template <typename T>
std::vector<T> BasicTensor<T>::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for shape " + shape_str(s));
  std::int64_t offset = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v < 0 || v >= s[i]) throw ShapeError("index out of range for shape " + shape_str(s));
    offset = offset * s[i] + v;
    ++i;
  }
  return data()[static_cast<std::size_t>(offset)];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const { return impl_ && impl_->requires_grad; }

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool flag) {
  if (!impl_) throw ShapeError("use of undefined tensor");
  impl_->requires_grad = flag;
  if (!flag) impl_->grad.clear();
  return *this;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!impl_) return {};
  return impl_->grad;
}

template <typename T>
bool BasicTensor<T>::has_grad() const { return impl_ && !impl_->grad.empty(); }

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() without seed requires a single-element tensor, got " + shape_str(shape()));
  }
  const T one = T{1};
  backward(std::span<const T>(&one, 1));
}

template <typename T>
void BasicTensor<T>::backward(std::span<const T> seed) const {
  if (!impl_) throw ShapeError("backward on undefined tensor");
  if (static_cast<std::int64_t>(seed.size()) != numel()) {
    throw ShapeError("backward seed size " + std::to_string(seed.size()) + " does not match shape " +
                     shape_str(shape()));
  }
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<detail::TensorImpl<T>*> order;
  std::unordered_set<detail::TensorImpl<T>*> visited;
  std::vector<std::pair<detail::TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto n_inputs = node->node ? node->node->inputs.size() : 0;
    if (next < n_inputs) {
      auto* child = node->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto root_grad = impl_->accumulate_target();
  for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* t = *it;
    if (t->node && t->node->backward && !t->grad.empty()) t->node->backward(t->grad);
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  if (!impl_) return {};
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->storage = impl_->storage;
  return BasicTensor(std::move(impl));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  if (!impl_) return {};
  return from(impl_->shape, *impl_->storage, false);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::make_result(Shape shape, std::vector<T> values, std::initializer_list<const BasicTensor*> inputs,
                           detail::BackwardFn<T> backward) {
  std::vector<BasicTensor> copies;
  copies.reserve(inputs.size());
  for (const auto* t : inputs) copies.push_back(*t);
  return make_result(std::move(shape), std::move(values), copies, std::move(backward));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::make_result(Shape shape, std::vector<T> values, const std::vector<BasicTensor>& inputs,
                           detail::BackwardFn<T> backward) {
  BasicTensor out = from(std::move(shape), std::move(values), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<detail::Node<T>>();
  for (const auto& t : inputs) {
    if (t.requires_grad()) node->inputs.push_back(t.impl());
  }
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->node = std::move(node);
  return out;
}

template <typename T>
std::span<T> BasicTensor<T>::grad_sink(const std::shared_ptr<Impl>& impl) {
  if (!impl) return {};
  return impl->accumulate_target();
}

template struct detail::TensorImpl<float>;
template struct detail::TensorImpl<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace respira

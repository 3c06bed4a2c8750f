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

#pragma once

#include <cstdint>
#include <vector>

#include "respira/tensor.hpp"

namespace respira::ops {

/// 2-D cross-correlation. input [B,C,H,W], kernel [C',C,kh,kw] -> [B,C',H',W'],
/// H' = (H + 2*padding - kh) / stride + 1. No bias term.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, std::int64_t stride = 1, std::int64_t padding = 0);

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  std::vector<float> mean;
  std::vector<float> var;
  explicit BatchNormStats(std::size_t channels = 0) : mean(channels, 0.0f), var(channels, 1.0f) {}
};

enum class NormMode { kTrain, kEval };

inline constexpr double kBatchNormEps = 1e-5;

/// Per-channel normalization of [B,C,H,W]. Train mode uses biased batch
/// statistics and folds the unbiased variance into `stats` with `momentum`.
template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, BatchNormStats& stats,
                   NormMode mode, double momentum = 0.1);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

enum class PoolKind { kAvg, kMax };

/// Pooling over the two trailing axes of [B,C,H,W]. Max routes the gradient
/// to the first (row-major) maximal element of each window.
template <typename T>
BasicTensor<T> pool2d(const BasicTensor<T>& input, PoolKind kind, std::int64_t window, std::int64_t stride);

/// a [..., m, k] x b [..., k, n]. Leading dimensions must be equal, or one
/// operand may have none (it is then shared across the other's batch).
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Numerically stable softmax along `axis`.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& input, std::int64_t axis);

enum class ReduceKind { kMean, kMax, kSum };

/// Reduces `axis` away. Max routes the gradient to the first maximal element.
template <typename T>
BasicTensor<T> reduce(const BasicTensor<T>& input, ReduceKind kind, std::int64_t axis);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x [..., n] + bias [n].
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor);
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::int64_t>& order);
/// Swaps the last two axes.
template <typename T>
BasicTensor<T> transpose_last(const BasicTensor<T>& x);
/// Sum of all elements to a scalar.
template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x);
/// Sum of x * weights with a constant weight tensor of the same shape.
template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& x, const BasicTensor<T>& weights);

}  // namespace respira::ops

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

// CNN-TSA: CNN6-style backbone, frequency aggregation, temporal
// self-attention, temporal mean pooling and a linear head.
//
// Each backbone block is conv (kernel k, stride 1, pad k/2, no bias) ->
// batchnorm -> ReLU -> 2x2 average pooling. Aggregation sums the mean and the
// max over the frequency axis, giving [B, T', d]. Attention is single-head
// scaled dot-product with d_k = d / 8 and no residual connection.
//
// Placements other than after_aggregation attend over time on the
// frequency-flattened map: [B,C,T,F] -> [B,T,C*F] -> attention -> back.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "respira/checkpoint.hpp"
#include "respira/ops.hpp"
#include "respira/tensor.hpp"

namespace respira {

enum class Placement { kNone, kInput, kAfterBlock, kAfterAggregation };

struct ModelConfig {
  std::vector<int> channels{64, 128, 256, 512};
  int kernel_size = 5;
  int n_classes = 4;
  Placement placement = Placement::kAfterAggregation;
  int placement_block = 0;  // 1-based, only for kAfterBlock
  int n_mels_in = 64;

  int n_conv_blocks() const { return static_cast<int>(channels.size()); }
  int d() const { return channels.empty() ? 0 : channels.back(); }
  /// Width of the sequence the attention sees ([B,T,width]).
  int attention_width() const;
  int d_k() const { return attention_width() / 8; }
  /// Frequency rows left after `blocks` pooling stages.
  int freq_after(int blocks) const;

  /// Structural checks; throws ConfigError.
  void validate() const;
  /// Additionally enforces the paper's pairing of 4 blocks with d=512 and
  /// 3 blocks with d=256.
  void validate_paper() const;

  std::string placement_name() const;
  void set_placement(const std::string& name);

  std::string canonical() const;
  std::string hash() const;
  static ModelConfig parse(const std::string& canonical);

  /// 4 blocks, d=512, 4 classes (ICBHI).
  static ModelConfig icbhi(int n_classes = 4);
  /// 3 blocks, d=256, 7 classes (SPRSound).
  static ModelConfig sprsound(int n_classes = 7);
};

template <typename T>
struct ModelParams {
  std::vector<BasicTensor<T>> conv;
  std::vector<BasicTensor<T>> gamma;
  std::vector<BasicTensor<T>> beta;
  BasicTensor<T> wq, wk, wv;  // undefined when placement is none
  BasicTensor<T> head_w, head_b;

  /// Trainable tensors with stable names, in checkpoint order.
  std::vector<std::pair<std::string, BasicTensor<T>>> named() const;
  std::vector<BasicTensor<T>> list() const;

  template <typename U>
  ModelParams<U> cast() const;
  /// Shares storage, no gradient tracking.
  ModelParams detached() const;
};

using BnStats = std::vector<ops::BatchNormStats>;

template <typename T>
struct AttentionResult {
  BasicTensor<T> out;      // [B,T,width]
  BasicTensor<T> weights;  // [B,T,T]
};

template <typename T>
struct ForwardResult {
  BasicTensor<T> logits;
  /// Post-ReLU activation of the last conv layer, a leaf requiring
  /// gradients when capture was requested.
  BasicTensor<T> last_conv;
  BasicTensor<T> attention;
};

/// Conv blocks only: [B,1,T,F] -> [B,d,T>>n,F>>n].
template <typename T>
BasicTensor<T> backbone_forward(const BasicTensor<T>& x, const ModelConfig& cfg, const ModelParams<T>& p,
                                BnStats& stats, ops::NormMode mode);

/// [B,C,T,F] -> [B,T,C], mean plus max over F.
template <typename T>
BasicTensor<T> aggregate_frequency(const BasicTensor<T>& fm);

template <typename T>
AttentionResult<T> temporal_self_attention(const BasicTensor<T>& x, const BasicTensor<T>& wq,
                                           const BasicTensor<T>& wk, const BasicTensor<T>& wv);

/// mean over T, then x W + b.
template <typename T>
BasicTensor<T> classify_head(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

template <typename T>
ForwardResult<T> forward(const BasicTensor<T>& x, const ModelConfig& cfg, const ModelParams<T>& p, BnStats& stats,
                         ops::NormMode mode, bool capture_last_conv = false);

struct LayerFlops {
  std::string name;
  double flops = 0.0;
};

struct FlopsReport {
  std::vector<LayerFlops> layers;
  double total() const;
  double conv() const;
  double attention() const;
};

/// FLOPs for one [1,1,frames,F] input, counted as 2 x multiply-accumulates
/// for conv, matmul and attention. Normalization, activations, pooling and
/// softmax are not counted.
FlopsReport count_flops(const ModelConfig& cfg, std::int64_t frames);

/// Trainable parameters implied by the config (BN running stats excluded).
std::int64_t parameter_count(const ModelConfig& cfg);

class CnnTsa {
 public:
  CnnTsa(ModelConfig cfg, std::uint64_t seed);
  CnnTsa(const CnnTsa&) = delete;
  CnnTsa& operator=(const CnnTsa&) = delete;
  CnnTsa(CnnTsa&&) = default;
  CnnTsa& operator=(CnnTsa&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ModelParams<float>& params() { return params_; }
  const ModelParams<float>& params() const { return params_; }
  BnStats& bn_stats() { return stats_; }
  const BnStats& bn_stats() const { return stats_; }

  Tensor logits(const Tensor& x, ops::NormMode mode);
  /// Eval-mode forward over frozen parameters (no parameter gradients).
  ForwardResult<float> frozen_forward(const Tensor& x, bool capture_last_conv) const;

  std::int64_t parameter_count() const;
  CnnTsa clone() const;

  Checkpoint to_checkpoint() const;
  static CnnTsa from_checkpoint(const Checkpoint& ckpt);
  void save(const std::string& path) const;
  /// Refuses when `expected_hash` is non-empty and differs from the stored
  /// config hash.
  static CnnTsa load(const std::string& path, const std::string& expected_hash = "");
  /// Copies every tensor whose name and shape match (e.g. exported CNN6
  /// backbone weights). Returns the number imported.
  int import_weights(const Checkpoint& source);

 private:
  ModelConfig cfg_;
  ModelParams<float> params_;
  BnStats stats_;
};

}  // namespace respira

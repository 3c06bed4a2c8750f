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

// Per-sample attribution maps over the input spectrogram.
//
// Grad-CAM combines the post-ReLU maps of the last conv layer with their
// spatially averaged gradients and keeps the sign. Integrated Gradients works
// with any differentiable scorer. Maps are not normalized.

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "respira/audio.hpp"
#include "respira/model.hpp"

namespace respira {

enum class AttributionMethod { kGradCam, kIntegratedGradients };

std::string attribution_method_name(AttributionMethod m);
AttributionMethod parse_attribution_method(const std::string& name);

struct AttributionMap {
  std::int64_t frames = 0;
  std::int64_t bands = 0;
  std::vector<float> values;  // row-major [frames][bands]
  std::string sample_id;
  int class_id = 0;
  AttributionMethod method = AttributionMethod::kGradCam;

  float at(std::int64_t t, std::int64_t f) const { return values[static_cast<std::size_t>(t * bands + f)]; }
};

/// Stacks spectrograms of equal size into [B,1,T,F].
Tensor to_batch(std::span<const Spectrogram* const> specs);
Tensor to_batch(const Spectrogram& spec);

/// Bilinear resize of a row-major h x w grid, half-pixel centers
/// (align_corners = false) with edge clamping.
std::vector<float> bilinear_resize(std::span<const float> src, std::int64_t h, std::int64_t w, std::int64_t out_h,
                                   std::int64_t out_w);

/// sum_m mean(grads_m) * maps_m for maps and grads of shape [C,h,w].
std::vector<float> gradcam_combine(std::span<const float> maps, std::span<const float> grads, std::int64_t channels,
                                   std::int64_t h, std::int64_t w);

AttributionMap gradcam(const CnnTsa& model, const Spectrogram& spec, int class_id);
/// One forward/backward for the whole batch; eval-mode batchnorm keeps the
/// samples independent.
std::vector<AttributionMap> gradcam_batch(const CnnTsa& model, std::span<const Spectrogram* const> specs,
                                          std::span<const int> class_ids);

/// Maps [B,1,T,F] to logits [B,n_classes]. Rows must not interact.
using ScoreFn = std::function<Tensor(const Tensor&)>;

ScoreFn model_scorer(const CnnTsa& model);

struct IgConfig {
  int steps = 50;
  /// Constant baseline, log of the log-Mel floor (silence).
  float baseline = static_cast<float>(std::log(1e-10));
  /// Full baseline spectrogram; overrides `baseline` when set.
  std::optional<std::vector<float>> baseline_values;
  int batch = 16;
};

/// Right-Riemann integrated gradients along the straight path from the
/// baseline to the input.
AttributionMap integrated_gradients(const ScoreFn& score, const Spectrogram& spec, int class_id,
                                    const IgConfig& cfg = {});
AttributionMap integrated_gradients(const CnnTsa& model, const Spectrogram& spec, int class_id,
                                    const IgConfig& cfg = {});

/// Class score for a single [T][F] input.
double class_score(const ScoreFn& score, const Spectrogram& spec, int class_id);

AttributionMap attribute(const CnnTsa& model, const Spectrogram& spec, int class_id, AttributionMethod method,
                         const IgConfig& ig = {});

/// Mean over time for each band.
std::vector<double> band_profile(const AttributionMap& map);

/// Diverging heatmap, time left to right, low bands at the bottom.
std::string heatmap_svg(const AttributionMap& map, int cell_px = 4);

inline constexpr std::uint32_t kAttributionDumpVersion = 1;
void save_attributions(const std::string& path, const std::vector<AttributionMap>& maps);
std::vector<AttributionMap> load_attributions(const std::string& path);

}  // namespace respira

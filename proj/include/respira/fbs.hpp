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

// Frequency band selection.
//
// Importance-based selection trains a K-fold CV under the current mask,
// averages per-class Grad-CAM band profiles over each fold's training
// samples, scores bands as Mean - lambda * MaxDiff and drops the r lowest.
// Backward selection instead tries removing every window of `window`
// adjacent kept bands and keeps the removal with the best CV score.

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "respira/attribution.hpp"
#include "respira/mask.hpp"
#include "respira/train.hpp"

namespace respira {

struct ImportanceTable {
  std::vector<double> mean;
  std::vector<double> maxdiff;
  std::vector<double> score;
  double lambda = 0.0;
  int folds = 1;

  std::size_t bands() const { return score.size(); }
  /// Throws NumericalError unless score == mean - lambda * maxdiff and
  /// maxdiff >= 0 for every band (NaN rows mark removed bands).
  void check() const;
};

/// Mean band profile of the maps for one class in one fold.
std::vector<double> per_class_band_attribution(std::span<const AttributionMap> maps, int class_id, int fold);
std::vector<double> fold_average(const std::vector<std::vector<double>>& per_fold);
ImportanceTable importance_scores(const std::vector<std::vector<double>>& per_class, double lambda, int folds = 1);

/// Removes the r kept bands with the lowest score (lower index first on
/// ties). Returns nullopt when fewer than min_kept bands would remain.
std::optional<FrequencyMask> eliminate_lowest(const ImportanceTable& table, const FrequencyMask& mask, int r = 4,
                                              int min_kept = kMinKeptBands);

/// Windows of `window` adjacent kept bands, as original indices.
std::vector<std::vector<int>> candidate_windows(const FrequencyMask& mask, int window = 4);

struct FbsConfig {
  double lambda = 0.5;
  int r = 4;
  int window = 4;
  int folds = 5;
  /// AS points; infinity runs to the min_bands floor.
  double stop_epsilon = 0.5;
  int min_bands = kMinKeptBands;
  /// Batch size for the Grad-CAM passes.
  int attribution_batch = 64;

  void validate() const;
};

struct CandidateScore {
  std::vector<int> window;
  double mean_as = 0.0;
  double mean_loss = 0.0;
};

struct FbsIteration {
  int index = 0;
  /// Mask evaluated in this iteration.
  FrequencyMask mask;
  double mean_as = 0.0;
  double mean_loss = 0.0;
  std::vector<double> fold_as;
  std::optional<ImportanceTable> table;  // importance method
  std::vector<CandidateScore> candidates;  // backward method
  /// Bands removed after this iteration (empty on the last one).
  std::vector<int> removed;
};

struct FbsResult {
  FrequencyMask best;
  double best_as = 0.0;
  std::vector<FbsIteration> iterations;
  /// Cross-validation runs (one per evaluated mask) and single trainings.
  std::int64_t cv_runs = 0;
  std::int64_t trainings = 0;
  std::string stop_reason;

  /// Evaluated mask with exactly `kept` bands, if the run reached it.
  const FrequencyMask* mask_with(int kept) const;
};

using FbsProgress = std::function<void(const FbsIteration&)>;

FbsResult fbs_importance(const std::vector<Spectrogram>& data, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, const FbsConfig& cfg, const FbsProgress& progress = {});

/// The full mask is not evaluated: every CV run scores one candidate window.
FbsResult fbs_backward(const std::vector<Spectrogram>& data, const ModelConfig& model_cfg,
                       const TrainConfig& train_cfg, const FbsConfig& cfg, const FbsProgress& progress = {});

void write_importance_csv(const std::string& path, const ImportanceTable& table, const FrequencyMask& mask);
/// One row per iteration: kept bands, mean AS, mean loss, removed bands.
void write_fbs_curve_csv(const std::string& path, const FbsResult& result);
/// Retention (% of bands kept) against mean CV AS.
std::string fbs_curve_svg(const FbsResult& result, int total_bands);

}  // namespace respira

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

// Training, evaluation and the challenge metrics.
//
// Class 0 is always "Normal". Se counts exact-class hits over all
// adventitious ground truth, Sp counts Normal hits over Normal ground truth.
// The binary task collapses every non-Normal label to 1.

#pragma once

#include <atomic>
#include <limits>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "respira/audio.hpp"
#include "respira/mask.hpp"
#include "respira/model.hpp"

namespace respira {

enum class Task { kBinary, kMulticlass };

std::string task_name(Task t);
Task parse_task(const std::string& name);
inline int task_label(int label, Task t) { return t == Task::kBinary ? (label > 0 ? 1 : 0) : label; }

struct MetricReport {
  double se = 0.0;
  double sp = 0.0;
  double as = 0.0;
  double hs = 0.0;
  double ts = 0.0;
  /// confusion[true][predicted]
  std::vector<std::vector<std::int64_t>> confusion;
  std::int64_t n_eval = 0;
  /// Mean unweighted cross-entropy, NaN when not computed.
  double loss = std::numeric_limits<double>::quiet_NaN();

  /// Se and Sp in percent; derives AS, HS and TS.
  static MetricReport from_se_sp(double se, double sp);
  static MetricReport from_confusion(std::vector<std::vector<std::int64_t>> confusion);
  /// Throws NumericalError if a formula identity or range is violated.
  void check() const;
  std::string to_json() const;
};

/// Unweighted mean of two reports' Se and Sp; AS is then the mean of the ASs.
MetricReport average_reports(const MetricReport& a, const MetricReport& b);

/// -(1/N) sum_n w_{y_n} log p_n[y_n], w_c = 1 / class_counts[c], p = softmax,
/// log clamped at 1e-12.
template <typename T>
BasicTensor<T> wcce_loss(const BasicTensor<T>& logits, std::span<const int> labels,
                         std::span<const std::int64_t> class_counts);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Patient-grouped K-fold. Patients are shuffled with `seed`, then assigned
/// largest-first to the fold holding the fewest records (lowest index on ties).
std::vector<FoldSplit> patient_kfold(std::span<const std::string> patient_ids, int k, std::uint64_t seed);
std::vector<FoldSplit> patient_kfold(const std::vector<Spectrogram>& data, int k, std::uint64_t seed);

struct TrainConfig {
  int epochs = 200;
  int batch_size = 128;
  int age_batch_size = 64;
  float lr0 = 1e-3f;
  float weight_decay = 1e-4f;
  std::uint64_t seed = 0;
  Task task = Task::kMulticlass;
  double age_threshold = 18.0;
  bool augment = true;
  SpecAugmentConfig augment_cfg;

  void validate() const;
  std::string canonical() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  /// From the augmented training batches as seen during the epoch.
  MetricReport train;
};

struct TrainResult {
  CnnTsa model;
  std::vector<EpochRecord> history;
};

/// Class histogram of `data` under `task`, length n_classes.
std::vector<std::int64_t> class_counts(const std::vector<Spectrogram>& data, Task task, int n_classes);

/// Trains from scratch. The model's n_mels_in is set from the (masked) data.
/// `run_id` selects independent init/shuffle streams derived from the seed.
TrainResult train(const std::vector<Spectrogram>& data, ModelConfig model_cfg, const TrainConfig& cfg,
                  const FrequencyMask* mask = nullptr, std::uint64_t run_id = 0);

/// Number of train() calls made by this process.
std::int64_t training_runs();

MetricReport evaluate(const CnnTsa& model, const std::vector<Spectrogram>& data, Task task,
                      const FrequencyMask* mask = nullptr);

struct CvResult {
  std::vector<MetricReport> folds;
  double mean_as = 0.0;
  double mean_loss = 0.0;
  std::vector<CnnTsa> models;
};

/// Worker threads for fold-parallel work: RESPIRA_NUM_THREADS if set,
/// otherwise the hardware concurrency.
int worker_threads();

/// Trains one model per fold on already-masked data and evaluates it on the
/// fold's validation records.
CvResult cross_validate(const std::vector<Spectrogram>& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const std::vector<FoldSplit>& folds, bool keep_models, std::uint64_t run_id = 0);

struct AgeSpecificResult {
  TrainResult child;
  TrainResult adult;
  MetricReport child_report;
  MetricReport adult_report;
  MetricReport combined;
};

/// Splits both sets at cfg.age_threshold (child: age < threshold); records
/// without an age are left out. Each stratum trains with age_batch_size.
AgeSpecificResult train_age_specific(const std::vector<Spectrogram>& train_data,
                                     const std::vector<Spectrogram>& eval_data, const ModelConfig& model_cfg,
                                     const TrainConfig& cfg, const FrequencyMask* mask = nullptr);

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace respira

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

#include "respira/fbs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "respira/error.hpp"

namespace respira {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void ImportanceTable::check() const {
  if (mean.size() != score.size() || maxdiff.size() != score.size()) {
    throw NumericalError("importance table columns differ in length");
  }
  for (std::size_t f = 0; f < score.size(); ++f) {
    if (std::isnan(score[f]) && std::isnan(mean[f])) continue;
    if (!(maxdiff[f] >= 0.0)) throw NumericalError("negative MaxDiff at band " + std::to_string(f));
    if (score[f] != mean[f] - lambda * maxdiff[f]) {
      throw NumericalError("importance score mismatch at band " + std::to_string(f));
    }
  }
}

std::vector<double> per_class_band_attribution(std::span<const AttributionMap> maps, int class_id, int fold) {
  std::vector<double> acc;
  int n = 0;
  for (const auto& m : maps) {
    if (m.class_id != class_id) continue;
    const auto p = band_profile(m);
    if (acc.empty()) acc.assign(p.size(), 0.0);
    if (p.size() != acc.size()) throw ShapeError("attribution maps disagree on the band count");
    for (std::size_t f = 0; f < p.size(); ++f) acc[f] += p[f];
    ++n;
  }
  if (n == 0) {
    throw DataError("class " + std::to_string(class_id) + " has no training samples in fold " +
                    std::to_string(fold));
  }
  for (auto& v : acc) v /= n;
  return acc;
}

std::vector<double> fold_average(const std::vector<std::vector<double>>& per_fold) {
  if (per_fold.empty()) throw ConfigError("fold_average needs at least one fold");
  std::vector<double> out(per_fold[0].size(), 0.0);
  for (const auto& v : per_fold) {
    if (v.size() != out.size()) throw ShapeError("fold vectors differ in length");
    for (std::size_t f = 0; f < v.size(); ++f) out[f] += v[f];
  }
  for (auto& v : out) v /= static_cast<double>(per_fold.size());
  return out;
}

ImportanceTable importance_scores(const std::vector<std::vector<double>>& per_class, double lambda, int folds) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1], got " + std::to_string(lambda));
  if (per_class.empty()) throw ConfigError("importance_scores needs at least one class");
  const auto n = per_class[0].size();
  for (const auto& v : per_class)
    if (v.size() != n) throw ShapeError("class vectors differ in length");
  ImportanceTable t;
  t.lambda = lambda;
  t.folds = folds;
  t.mean.assign(n, 0.0);
  t.maxdiff.assign(n, 0.0);
  t.score.resize(n);
  for (std::size_t f = 0; f < n; ++f) {
    double lo = per_class[0][f], hi = per_class[0][f], sum = 0.0;
    for (const auto& v : per_class) {
      sum += v[f];
      lo = std::min(lo, v[f]);
      hi = std::max(hi, v[f]);
    }
    // the largest pairwise gap is max - min
    t.mean[f] = sum / static_cast<double>(per_class.size());
    t.maxdiff[f] = hi - lo;
    t.score[f] = t.mean[f] - lambda * t.maxdiff[f];
  }
  t.check();
  return t;
}

std::optional<FrequencyMask> eliminate_lowest(const ImportanceTable& table, const FrequencyMask& mask, int r,
                                              int min_kept) {
  if (static_cast<int>(table.bands()) != mask.bands()) {
    throw ShapeError("importance table has " + std::to_string(table.bands()) + " bands, mask has " +
                     std::to_string(mask.bands()));
  }
  if (r < 1) throw ConfigError("r must be >= 1");
  if (mask.kept() - r < min_kept) return std::nullopt;
  auto kept = mask.kept_indices();
  std::stable_sort(kept.begin(), kept.end(), [&](int a, int b) { return table.score[a] < table.score[b]; });
  std::vector<int> removed(kept.begin(), kept.begin() + r);
  std::sort(removed.begin(), removed.end());
  return mask.without(removed);
}

std::vector<std::vector<int>> candidate_windows(const FrequencyMask& mask, int window) {
  const auto kept = mask.kept_indices();
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i + window <= kept.size(); ++i) out.emplace_back(kept.begin() + i, kept.begin() + i + window);
  return out;
}

void FbsConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
  if (r < 1 || window < 1) throw ConfigError("r and window must be >= 1");
  if (folds < 2) throw ConfigError("FBS needs at least 2 folds");
  if (min_bands < kMinKeptBands) throw ConfigError("at least 8 bands must be kept");
  if (!(stop_epsilon >= 0.0)) throw ConfigError("stop_epsilon must be >= 0");
}

const FrequencyMask* FbsResult::mask_with(int kept) const {
  for (const auto& it : iterations)
    if (it.mask.kept() == kept) return &it.mask;
  return nullptr;
}

namespace {

int n_task_classes(const ModelConfig& m, const TrainConfig& t) { return t.task == Task::kBinary ? 2 : m.n_classes; }

ImportanceTable importance_from_models(const std::vector<Spectrogram>& masked, const std::vector<FoldSplit>& folds,
                                       const std::vector<CnnTsa>& models, int n_classes, Task task,
                                       const FbsConfig& cfg) {
  std::vector<std::vector<std::vector<double>>> per_class_fold(static_cast<std::size_t>(n_classes));
  for (std::size_t k = 0; k < folds.size(); ++k) {
    std::vector<AttributionMap> maps;
    for (int c = 0; c < n_classes; ++c) {
      std::vector<const Spectrogram*> group;
      for (auto i : folds[k].train)
        if (task_label(masked[i].label, task) == c) group.push_back(&masked[i]);
      for (std::size_t b0 = 0; b0 < group.size(); b0 += static_cast<std::size_t>(cfg.attribution_batch)) {
        const auto b1 = std::min(group.size(), b0 + static_cast<std::size_t>(cfg.attribution_batch));
        std::span<const Spectrogram* const> chunk(group.data() + b0, b1 - b0);
        const std::vector<int> ids(chunk.size(), c);
        auto part = gradcam_batch(models[k], chunk, ids);
        maps.insert(maps.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
    }
    for (int c = 0; c < n_classes; ++c) {
      per_class_fold[c].push_back(per_class_band_attribution(maps, c, static_cast<int>(k)));
    }
  }
  std::vector<std::vector<double>> per_class;
  for (auto& v : per_class_fold) per_class.push_back(fold_average(v));
  return importance_scores(per_class, cfg.lambda, static_cast<int>(folds.size()));
}

/// Compacted table re-indexed to the full band axis, NaN where removed.
ImportanceTable expand(const ImportanceTable& compact, const FrequencyMask& mask) {
  ImportanceTable t;
  t.lambda = compact.lambda;
  t.folds = compact.folds;
  const auto n = static_cast<std::size_t>(mask.bands());
  t.mean.assign(n, kNaN);
  t.maxdiff.assign(n, kNaN);
  t.score.assign(n, kNaN);
  const auto idx = mask.kept_indices();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    t.mean[idx[j]] = compact.mean[j];
    t.maxdiff[idx[j]] = compact.maxdiff[j];
    t.score[idx[j]] = compact.score[j];
  }
  return t;
}

void check_bands(const std::vector<Spectrogram>& data) {
  if (data.empty()) throw DataError("FBS needs a nonempty dataset");
  for (const auto& s : data)
    if (s.bands != data[0].bands || s.frames != data[0].frames) throw ShapeError("FBS needs equally sized spectrograms");
}

}  // namespace

FbsResult fbs_importance(const std::vector<Spectrogram>& data, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, const FbsConfig& cfg, const FbsProgress& progress) {
  cfg.validate();
  check_bands(data);
  const auto folds = patient_kfold(data, cfg.folds, train_cfg.seed);
  const int n_classes = n_task_classes(model_cfg, train_cfg);
  const auto runs_before = training_runs();
  FbsResult res;
  res.best_as = -std::numeric_limits<double>::infinity();
  FrequencyMask mask = FrequencyMask::full(static_cast<int>(data[0].bands));
  mask.origin = MaskOrigin::kImportance;
  for (int iter = 0;; ++iter) {
    const auto masked = apply_mask(data, mask);
    auto cv = cross_validate(masked, model_cfg, train_cfg, folds, true, static_cast<std::uint64_t>(iter));
    ++res.cv_runs;
    FbsIteration it;
    it.index = iter;
    it.mask = mask;
    it.mean_as = cv.mean_as;
    it.mean_loss = cv.mean_loss;
    for (const auto& f : cv.folds) it.fold_as.push_back(f.as);
    if (cv.mean_as >= res.best_as) {
      res.best_as = cv.mean_as;
      res.best = mask;
    }
    bool stop = false;
    if (cv.mean_as < res.best_as - cfg.stop_epsilon) {
      res.stop_reason = "mean CV AS fell more than stop_epsilon below the best";
      stop = true;
    } else if (mask.kept() - cfg.r < cfg.min_bands) {
      res.stop_reason = "reached the minimum band count";
      stop = true;
    }
    if (!stop) {
      const auto compact = importance_from_models(masked, folds, cv.models, n_classes, train_cfg.task, cfg);
      it.table = expand(compact, mask);
      auto next = eliminate_lowest(*it.table, mask, cfg.r, cfg.min_bands);
      it.removed = next->history.back();
      mask = std::move(*next);
    }
    if (progress) progress(it);
    res.iterations.push_back(std::move(it));
    if (stop) break;
  }
  res.trainings = training_runs() - runs_before;
  return res;
}

FbsResult fbs_backward(const std::vector<Spectrogram>& data, const ModelConfig& model_cfg,
                       const TrainConfig& train_cfg, const FbsConfig& cfg, const FbsProgress& progress) {
  cfg.validate();
  check_bands(data);
  const auto folds = patient_kfold(data, cfg.folds, train_cfg.seed);
  const auto runs_before = training_runs();
  FbsResult res;
  res.best_as = -std::numeric_limits<double>::infinity();
  FrequencyMask mask = FrequencyMask::full(static_cast<int>(data[0].bands));
  mask.origin = MaskOrigin::kBackward;
  for (int iter = 0;; ++iter) {
    if (mask.kept() - cfg.window < cfg.min_bands) {
      res.stop_reason = "reached the minimum band count";
      break;
    }
    FbsIteration it;
    it.index = iter;
    std::size_t best = 0;
    std::vector<std::vector<double>> fold_as;
    // All candidates of an iteration share init and shuffle streams, so
    // their scores differ only through the removed bands.
    for (const auto& window : candidate_windows(mask, cfg.window)) {
      const auto candidate = mask.without(window);
      auto cv = cross_validate(apply_mask(data, candidate), model_cfg, train_cfg, folds, false,
                               static_cast<std::uint64_t>(iter));
      ++res.cv_runs;
      it.candidates.push_back({window, cv.mean_as, cv.mean_loss});
      std::vector<double> fa;
      for (const auto& f : cv.folds) fa.push_back(f.as);
      fold_as.push_back(std::move(fa));
      const auto& a = it.candidates.back();
      const auto& b = it.candidates[best];
      if (a.mean_as > b.mean_as || (a.mean_as == b.mean_as && a.mean_loss < b.mean_loss)) {
        best = it.candidates.size() - 1;
      }
    }
    const auto& chosen = it.candidates[best];
    it.mask = mask.without(chosen.window);
    it.mean_as = chosen.mean_as;
    it.mean_loss = chosen.mean_loss;
    it.fold_as = fold_as[best];
    it.removed = chosen.window;
    mask = it.mask;
    if (it.mean_as >= res.best_as) {
      res.best_as = it.mean_as;
      res.best = mask;
    }
    const bool drop = it.mean_as < res.best_as - cfg.stop_epsilon;
    if (progress) progress(it);
    res.iterations.push_back(std::move(it));
    if (drop) {
      res.stop_reason = "mean CV AS fell more than stop_epsilon below the best";
      break;
    }
  }
  res.trainings = training_runs() - runs_before;
  return res;
}

void write_importance_csv(const std::string& path, const ImportanceTable& table, const FrequencyMask& mask) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "band,kept,mean,maxdiff,score\n" << std::setprecision(9);
  for (std::size_t f = 0; f < table.bands(); ++f) {
    os << f << ',' << (mask.keep[f] ? 1 : 0) << ',';
    if (!std::isnan(table.score[f])) os << table.mean[f] << ',' << table.maxdiff[f] << ',' << table.score[f];
    else os << ",,";
    os << '\n';
  }
}

void write_fbs_curve_csv(const std::string& path, const FbsResult& result) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "iteration,kept,mean_as,mean_loss,candidates,removed\n" << std::setprecision(9);
  for (const auto& it : result.iterations) {
    os << it.index << ',' << it.mask.kept() << ',' << it.mean_as << ',' << it.mean_loss << ',' << it.candidates.size()
       << ',';
    for (std::size_t i = 0; i < it.removed.size(); ++i) os << (i ? " " : "") << it.removed[i];
    os << '\n';
  }
}

std::string fbs_curve_svg(const FbsResult& result, int total_bands) {
  constexpr int kW = 480, kH = 320, kPad = 48;
  double lo = 100.0, hi = 0.0;
  for (const auto& it : result.iterations) {
    lo = std::min(lo, it.mean_as);
    hi = std::max(hi, it.mean_as);
  }
  if (result.iterations.empty() || hi - lo < 1.0) {
    lo = std::max(0.0, lo - 1.0);
    hi = std::min(100.0, hi + 1.0);
  }
  auto x = [&](int kept) { return kPad + (kW - 2 * kPad) * (1.0 - static_cast<double>(kept) / total_bands); };
  auto y = [&](double as) { return kH - kPad - (kH - 2 * kPad) * (as - lo) / std::max(hi - lo, 1e-9); };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\"" << kH - kPad
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kH - kPad
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\" font-size=\"12\">bands kept (%)</text>\n";
  os << "<text x=\"14\" y=\"" << kH / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << kH / 2
     << ")\" text-anchor=\"middle\">mean CV AS</text>\n";
  os << "<text x=\"" << kPad - 4 << "\" y=\"" << y(hi) << "\" text-anchor=\"end\" font-size=\"10\">" << hi << "</text>\n";
  os << "<text x=\"" << kPad - 4 << "\" y=\"" << y(lo) << "\" text-anchor=\"end\" font-size=\"10\">" << lo << "</text>\n";
  os << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
  for (const auto& it : result.iterations) os << x(it.mask.kept()) << ',' << y(it.mean_as) << ' ';
  os << "\"/>\n";
  for (const auto& it : result.iterations) {
    os << "<circle cx=\"" << x(it.mask.kept()) << "\" cy=\"" << y(it.mean_as) << "\" r=\"3\" fill=\"#c0392b\"><title>"
       << 100.0 * it.mask.kept() / total_bands << "% kept, AS " << it.mean_as << "</title></circle>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace respira

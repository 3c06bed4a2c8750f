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

#include "respira/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include "respira/attribution.hpp"
#include "respira/error.hpp"
#include "respira/optim.hpp"
#include "respira/random.hpp"

namespace respira {

namespace {
std::atomic<std::int64_t> g_training_runs{0};
constexpr double kLogClamp = 1e-12;
}  // namespace

std::string task_name(Task t) { return t == Task::kBinary ? "binary" : "multiclass"; }

Task parse_task(const std::string& name) {
  if (name == "binary") return Task::kBinary;
  if (name == "multiclass") return Task::kMulticlass;
  throw ConfigError("unknown task '" + name + "' (binary, multiclass)");
}

MetricReport MetricReport::from_se_sp(double se, double sp) {
  MetricReport r;
  r.se = se;
  r.sp = sp;
  r.as = (se + sp) / 2.0;
  r.hs = se + sp == 0.0 ? 0.0 : 2.0 * se * sp / (se + sp);
  r.ts = (r.as + r.hs) / 2.0;
  r.check();
  return r;
}

MetricReport MetricReport::from_confusion(std::vector<std::vector<std::int64_t>> confusion) {
  const auto n = confusion.size();
  if (n < 2) throw ConfigError("metrics need at least two classes");
  std::int64_t normal = 0, normal_hit = 0, adv = 0, adv_hit = 0, total = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (confusion[t].size() != n) throw ShapeError("confusion matrix must be square");
    const auto row = std::accumulate(confusion[t].begin(), confusion[t].end(), std::int64_t{0});
    total += row;
    if (t == 0) {
      normal += row;
      normal_hit += confusion[0][0];
    } else {
      adv += row;
      adv_hit += confusion[t][t];
    }
  }
  if (total == 0) throw DataError("empty evaluation set");
  const double se = adv ? 100.0 * static_cast<double>(adv_hit) / static_cast<double>(adv) : 0.0;
  const double sp = normal ? 100.0 * static_cast<double>(normal_hit) / static_cast<double>(normal) : 0.0;
  auto r = from_se_sp(se, sp);
  r.confusion = std::move(confusion);
  r.n_eval = total;
  return r;
}

void MetricReport::check() const {
  auto fail = [&](const std::string& what) { throw NumericalError("metric report inconsistent: " + what); };
  for (double v : {se, sp, as, hs, ts})
    if (!(v >= 0.0 && v <= 100.0)) fail("value outside [0,100]");
  if (std::abs(as - (se + sp) / 2.0) > 1e-9) fail("AS");
  const double h = se + sp == 0.0 ? 0.0 : 2.0 * se * sp / (se + sp);
  if (std::abs(hs - h) > 1e-9) fail("HS");
  if (std::abs(ts - (as + hs) / 2.0) > 1e-9) fail("TS");
}

std::string MetricReport::to_json() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "{\"se\": " << se << ", \"sp\": " << sp << ", \"as\": " << as << ", \"hs\": " << hs << ", \"ts\": " << ts
     << ", \"n_eval\": " << n_eval;
  if (std::isfinite(loss)) os << ", \"loss\": " << std::setprecision(6) << loss;
  os << ", \"confusion\": [";
  for (std::size_t i = 0; i < confusion.size(); ++i) {
    os << (i ? ", " : "") << '[';
    for (std::size_t j = 0; j < confusion[i].size(); ++j) os << (j ? ", " : "") << confusion[i][j];
    os << ']';
  }
  os << "]}";
  return os.str();
}

MetricReport average_reports(const MetricReport& a, const MetricReport& b) {
  auto r = MetricReport::from_se_sp((a.se + b.se) / 2.0, (a.sp + b.sp) / 2.0);
  r.n_eval = a.n_eval + b.n_eval;
  return r;
}

template <typename T>
BasicTensor<T> wcce_loss(const BasicTensor<T>& logits, std::span<const int> labels,
                         std::span<const std::int64_t> class_counts) {
  if (logits.ndim() != 2) throw ShapeError("wcce_loss expects [N,C] logits, got " + shape_str(logits.shape()));
  const auto n = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) throw ShapeError("wcce_loss: one label per row");
  if (static_cast<std::int64_t>(class_counts.size()) != c) throw ShapeError("wcce_loss: one count per class");
  std::vector<double> weight(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) throw ConfigError("label " + std::to_string(y) + " outside 0.." + std::to_string(c - 1));
    if (class_counts[y] <= 0) throw ConfigError("class " + std::to_string(y) + " has zero count but appears as a label");
    weight[i] = 1.0 / static_cast<double>(class_counts[y]);
  }
  const auto z = logits.data();
  std::vector<double> p(static_cast<std::size_t>(n * c));
  std::vector<bool> clamped(static_cast<std::size_t>(n));
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(z[i * c + j]));
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) s += p[i * c + j] = std::exp(z[i * c + j] - mx);
    for (std::int64_t j = 0; j < c; ++j) p[i * c + j] /= s;
    const double py = p[i * c + labels[i]];
    clamped[i] = py < kLogClamp;
    loss -= weight[i] * std::log(std::max(py, kLogClamp));
  }
  loss /= static_cast<double>(n);
  std::vector<int> y(labels.begin(), labels.end());
  auto impl = logits.impl();
  return BasicTensor<T>::make_result(
      {}, {static_cast<T>(loss)}, {&logits},
      [impl, p = std::move(p), y = std::move(y), weight = std::move(weight), clamped = std::move(clamped), n,
       c](std::span<const T> gout) {
        auto g = BasicTensor<T>::grad_sink(impl);
        for (std::int64_t i = 0; i < n; ++i) {
          if (clamped[i]) continue;
          const double k = gout[0] * weight[i] / static_cast<double>(n);
          for (std::int64_t j = 0; j < c; ++j) {
            g[i * c + j] += static_cast<T>(k * (p[i * c + j] - (j == y[i] ? 1.0 : 0.0)));
          }
        }
      });
}

template BasicTensor<float> wcce_loss(const BasicTensor<float>&, std::span<const int>, std::span<const std::int64_t>);
template BasicTensor<double> wcce_loss(const BasicTensor<double>&, std::span<const int>,
                                       std::span<const std::int64_t>);

std::vector<FoldSplit> patient_kfold(std::span<const std::string> patient_ids, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("K-fold needs K >= 2, got " + std::to_string(k));
  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < patient_ids.size(); ++i) by_patient[patient_ids[i]].push_back(i);
  if (static_cast<int>(by_patient.size()) < k) {
    throw ConfigError("patient-wise " + std::to_string(k) + "-fold split needs at least " + std::to_string(k) +
                      " patients, found " + std::to_string(by_patient.size()));
  }
  std::vector<const std::vector<std::size_t>*> groups;
  for (const auto& [id, idx] : by_patient) groups.push_back(&idx);
  Rng rng(seed);
  rng.shuffle(groups.begin(), groups.end());
  std::stable_sort(groups.begin(), groups.end(), [](auto* a, auto* b) { return a->size() > b->size(); });
  std::vector<std::vector<std::size_t>> val(static_cast<std::size_t>(k));
  for (const auto* g : groups) {
    std::size_t best = 0;
    for (std::size_t f = 1; f < val.size(); ++f)
      if (val[f].size() < val[best].size()) best = f;
    val[best].insert(val[best].end(), g->begin(), g->end());
  }
  std::vector<FoldSplit> out(static_cast<std::size_t>(k));
  std::vector<int> fold_of(patient_ids.size());
  for (int f = 0; f < k; ++f)
    for (auto i : val[f]) fold_of[i] = f;
  for (std::size_t i = 0; i < patient_ids.size(); ++i)
    for (int f = 0; f < k; ++f) (fold_of[i] == f ? out[f].val : out[f].train).push_back(i);
  return out;
}

std::vector<FoldSplit> patient_kfold(const std::vector<Spectrogram>& data, int k, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& s : data) ids.push_back(s.patient_id);
  return patient_kfold(ids, k, seed);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1 || age_batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr0 > 0.0f)) throw ConfigError("lr0 must be positive");
  if (weight_decay < 0.0f) throw ConfigError("weight_decay must be >= 0");
}

std::string TrainConfig::canonical() const {
  std::ostringstream os;
  os << "epochs=" << epochs << ";batch=" << batch_size << ";age_batch=" << age_batch_size << ";lr0=" << lr0
     << ";wd=" << weight_decay << ";seed=" << seed << ";task=" << task_name(task) << ";age=" << age_threshold
     << ";augment=" << (augment ? 1 : 0) << ";tm=" << augment_cfg.time_masks << ";fm=" << augment_cfg.freq_masks
     << ";tw=" << augment_cfg.max_time_width << ";fw=" << augment_cfg.max_freq_width;
  return os.str();
}

std::vector<std::int64_t> class_counts(const std::vector<Spectrogram>& data, Task task, int n_classes) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (const auto& s : data) {
    const int y = task_label(s.label, task);
    if (y < 0 || y >= n_classes) {
      throw DataError("record " + s.id + " has label " + std::to_string(s.label) + " outside the " +
                      task_name(task) + " class set");
    }
    ++counts[y];
  }
  return counts;
}

std::int64_t training_runs() { return g_training_runs.load(); }

namespace {

std::vector<int> argmax_rows(const Tensor& logits) {
  const auto n = logits.dim(0), c = logits.dim(1);
  const auto z = logits.data();
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (std::int64_t j = 1; j < c; ++j)
      if (z[i * c + j] > z[i * c + best]) best = static_cast<int>(j);
    out[i] = best;
  }
  return out;
}

std::vector<Spectrogram> masked_copy(const std::vector<Spectrogram>& data, const FrequencyMask* mask) {
  return mask ? apply_mask(data, *mask) : data;
}

}  // namespace

TrainResult train(const std::vector<Spectrogram>& raw, ModelConfig model_cfg, const TrainConfig& cfg,
                  const FrequencyMask* mask, std::uint64_t run_id) {
  cfg.validate();
  if (raw.empty()) throw DataError("training set is empty");
  for (const auto& s : raw) {
    for (float v : s.values)
      if (!std::isfinite(v)) throw DataError(s.id + ": spectrogram has non-finite values");
  }
  ++g_training_runs;
  const auto data = masked_copy(raw, mask);
  model_cfg.n_mels_in = static_cast<int>(data[0].bands);
  const int n_classes = model_cfg.n_classes;
  if (cfg.task == Task::kBinary && n_classes != 2) throw ConfigError("binary task needs a 2-class model");
  const auto counts = class_counts(data, cfg.task, n_classes);

  TrainResult result{CnnTsa(model_cfg, derive_seed(cfg.seed, 2 * run_id)), {}};
  Rng rng(derive_seed(cfg.seed, 2 * run_id + 1));
  auto& model = result.model;
  auto params = model.params().list();
  AdamState state;
  AdamConfig adam;
  adam.weight_decay = cfg.weight_decay;

  SpecAugmentConfig aug = cfg.augment_cfg;
  aug.max_time_width = std::min<int>(aug.max_time_width, static_cast<int>(data[0].frames));
  aug.max_freq_width = std::min<int>(aug.max_freq_width, static_cast<int>(data[0].bands));

  const auto n = data.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  std::int64_t step = 0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    std::vector<std::vector<std::int64_t>> confusion(n_classes, std::vector<std::int64_t>(n_classes, 0));
    double loss_sum = 0.0, lr = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const auto b1 = std::min(n, b0 + bs);
      std::vector<Spectrogram> batch;
      std::vector<int> labels;
      for (auto i = b0; i < b1; ++i) {
        const auto& s = data[order[i]];
        batch.push_back(cfg.augment ? spec_augment(s, aug, rng) : s);
        labels.push_back(task_label(s.label, cfg.task));
      }
      std::vector<const Spectrogram*> ptrs;
      for (const auto& s : batch) ptrs.push_back(&s);
      auto logits = model.logits(to_batch(ptrs), ops::NormMode::kTrain);
      auto loss = wcce_loss(logits, labels, counts);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step));
      }
      for (auto& p : params) p.zero_grad();
      loss.backward();
      lr = cosine_lr(step, total_steps - 1, cfg.lr0);
      adam.lr = static_cast<float>(lr);
      adam_step(params, state, adam);
      ++step;
      loss_sum += lv;
      const auto pred = argmax_rows(logits);
      for (std::size_t i = 0; i < labels.size(); ++i) ++confusion[labels[i]][pred[i]];
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(steps_per_epoch);
    rec.train = MetricReport::from_confusion(std::move(confusion));
    result.history.push_back(std::move(rec));
  }
  return result;
}

MetricReport evaluate(const CnnTsa& model, const std::vector<Spectrogram>& raw, Task task,
                      const FrequencyMask* mask) {
  if (raw.empty()) throw DataError("evaluation set is empty");
  const auto data = masked_copy(raw, mask);
  const int n_classes = model.config().n_classes;
  if (task == Task::kBinary && n_classes != 2) throw ConfigError("binary task needs a 2-class model");
  std::vector<std::vector<std::int64_t>> confusion(n_classes, std::vector<std::int64_t>(n_classes, 0));
  NoGradGuard guard;
  double ce = 0.0;
  constexpr std::size_t kBatch = 256;
  for (std::size_t b0 = 0; b0 < data.size(); b0 += kBatch) {
    const auto b1 = std::min(data.size(), b0 + kBatch);
    std::vector<const Spectrogram*> ptrs;
    for (auto i = b0; i < b1; ++i) ptrs.push_back(&data[i]);
    const auto logits = model.frozen_forward(to_batch(ptrs), false).logits;
    const auto pred = argmax_rows(logits);
    const auto z = logits.data();
    for (auto i = b0; i < b1; ++i) {
      const int y = task_label(data[i].label, task);
      if (y < 0 || y >= n_classes) throw DataError("record " + data[i].id + " has a label outside the class set");
      ++confusion[y][pred[i - b0]];
      const auto row = z.subspan((i - b0) * n_classes, n_classes);
      const double mx = *std::max_element(row.begin(), row.end());
      double s = 0.0;
      for (float v : row) s += std::exp(v - mx);
      ce += -(row[y] - mx - std::log(s));
    }
  }
  auto r = MetricReport::from_confusion(std::move(confusion));
  r.loss = ce / static_cast<double>(data.size());
  return r;
}

int worker_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("RESPIRA_NUM_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("RESPIRA_NUM_THREADS must be a positive integer, got '" + std::string(env) + "'");
    n = static_cast<int>(std::min<long>(v, 1024));
  }
  return n;
}

CvResult cross_validate(const std::vector<Spectrogram>& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const std::vector<FoldSplit>& folds, bool keep_models, std::uint64_t run_id) {
  const auto k_folds = folds.size();
  std::vector<std::optional<TrainResult>> trained(k_folds);
  std::vector<MetricReport> reports(k_folds);
  std::vector<std::exception_ptr> errors(k_folds);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (auto k = next++; k < k_folds; k = next++) {
      try {
        std::vector<Spectrogram> tr, va;
        for (auto i : folds[k].train) tr.push_back(data[i]);
        for (auto i : folds[k].val) va.push_back(data[i]);
        trained[k] = train(tr, model_cfg, cfg, nullptr, run_id * k_folds + k);
        reports[k] = evaluate(trained[k]->model, va, cfg.task);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const auto n_threads = std::min<std::size_t>(k_folds, static_cast<std::size_t>(worker_threads()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  CvResult cv;
  for (std::size_t k = 0; k < k_folds; ++k) {
    cv.mean_as += reports[k].as / static_cast<double>(k_folds);
    cv.mean_loss += reports[k].loss / static_cast<double>(k_folds);
    cv.folds.push_back(std::move(reports[k]));
    if (keep_models) cv.models.push_back(std::move(trained[k]->model));
  }
  return cv;
}

AgeSpecificResult train_age_specific(const std::vector<Spectrogram>& train_data,
                                     const std::vector<Spectrogram>& eval_data, const ModelConfig& model_cfg,
                                     const TrainConfig& cfg, const FrequencyMask* mask) {
  auto split = [&](const std::vector<Spectrogram>& d, bool child) {
    std::vector<Spectrogram> out;
    for (const auto& s : d)
      if (std::isfinite(s.age_years) && (s.age_years < cfg.age_threshold) == child) out.push_back(s);
    return out;
  };
  const auto tc = split(train_data, true), ta = split(train_data, false);
  const auto ec = split(eval_data, true), ea = split(eval_data, false);
  auto require = [&](const std::vector<Spectrogram>& d, const std::string& what) {
    if (d.empty()) {
      throw DataError("age-specific training: " + what + " stratum is empty at threshold " +
                      std::to_string(cfg.age_threshold) + " years; choose a different age threshold");
    }
  };
  require(tc, "child training");
  require(ta, "adult training");
  require(ec, "child evaluation");
  require(ea, "adult evaluation");
  TrainConfig stratum = cfg;
  stratum.batch_size = cfg.age_batch_size;
  auto child = train(tc, model_cfg, stratum, mask, 1);
  auto adult = train(ta, model_cfg, stratum, mask, 2);
  auto cr = evaluate(child.model, ec, cfg.task, mask);
  auto ar = evaluate(adult.model, ea, cfg.task, mask);
  auto combined = average_reports(cr, ar);
  return {std::move(child), std::move(adult), std::move(cr), std::move(ar), std::move(combined)};
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "epoch,lr,loss,se,sp,as,hs,ts\n";
  os << std::setprecision(9);
  for (const auto& r : history) {
    os << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.train.se << ',' << r.train.sp << ',' << r.train.as << ','
       << r.train.hs << ',' << r.train.ts << '\n';
  }
}

}  // namespace respira

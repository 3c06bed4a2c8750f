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

// Acceptance runner. Prints one line per criterion:
//
//   acceptance [criterion ...] [--known-failure N ...] [--cli PATH] [--report FILE]
//
// Exit status is 0 when the set of failing criteria equals the declared
// known failures, so a fixed criterion turns the run red as well.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "respira/attribution.hpp"
#include "respira/data.hpp"
#include "respira/fbs.hpp"
#include "respira/model.hpp"
#include "respira/train.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace respira;

namespace {

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status = Status::kPass;
  std::string summary;
  std::vector<std::string> details;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// ------------------------------------------------------------------ 1

struct PublishedRow {
  const char* name;
  double sp, se, as;
  double hs = -1.0, ts = -1.0;
};

const std::vector<PublishedRow>& published_rows() {
  static const std::vector<PublishedRow> rows{
      {"ICBHI ablation, CNN", 73.21, 37.89, 55.55},
      {"ICBHI ablation, CNN-TSA", 78.78, 37.38, 58.08},
      {"ICBHI ablation, TSA+BS 50%", 79.00, 37.48, 58.24},
      {"ICBHI ablation, TSA+IS 50%", 78.53, 38.49, 58.51},
      {"ICBHI ablation, CNN (A)", 75.97, 36.37, 56.17},
      {"ICBHI ablation, CNN-TSA (A)", 77.63, 36.89, 57.27},
      {"ICBHI ablation, TSA+BS 50% (A)", 75.50, 40.56, 58.03},
      {"ICBHI ablation, TSA+IS 50% (A)", 70.06, 44.85, 57.46},
      {"ICBHI ablation, CNN (C)", 87.76, 40.66, 64.21},
      {"ICBHI ablation, CNN-TSA (C)", 90.11, 40.00, 65.05},
      {"ICBHI ablation, TSA+BS 50% (C)", 93.97, 40.67, 67.32},
      {"ICBHI ablation, TSA+IS 50% (C)", 88.81, 45.00, 66.91},
      {"ICBHI ablation, age-specific TSA", 83.87, 38.44, 61.16},
      {"ICBHI ablation, age-specific BS 50%", 84.74, 40.62, 62.68},
      {"ICBHI ablation, age-specific IS 50%", 79.44, 44.93, 62.19},
      {"ICBHI 4-class, TSA+BS 75%", 78.14, 38.00, 58.07},
      {"ICBHI 4-class, TSA+IS 75%", 80.37, 40.00, 60.19},
      {"ICBHI 2-class, CNN", 62.38, 66.35, 64.37},
      {"ICBHI 2-class, CNN-TSA", 67.87, 62.57, 65.22},
      {"ICBHI 2-class, TSA+BS 50%", 70.99, 61.77, 66.38},
      {"ICBHI 2-class, TSA+BS 75%", 71.94, 61.43, 66.69},
      {"ICBHI 2-class, TSA+IS 50%", 67.76, 66.27, 67.02},
      {"ICBHI 2-class, TSA+IS 75%", 72.22, 62.45, 67.34},
      {"ICBHI 2-class, age-specific BS 50%", 75.23, 61.67, 68.45},
      {"ICBHI 2-class, age-specific IS 50%", 76.63, 60.43, 68.53},
      {"SPRSound-22 task 1, CNN-TSA", 90.39, 75.46, 82.93, 82.26, 82.59},
      {"SPRSound-22 task 1, BS 50%", 91.67, 75.18, 83.42, 82.61, 82.76},
      {"SPRSound-22 task 1, BS 75%", 89.41, 76.60, 83.00, 82.51, 83.01},
      {"SPRSound-22 task 1, IS 50%", 87.09, 79.15, 83.12, 82.93, 83.03},
      {"SPRSound-22 task 1, IS 75%", 91.38, 76.03, 83.70, 83.00, 83.35},
      {"SPRSound-22 task 2, CNN-TSA", 89.07, 88.65, 88.86, 88.82, 88.84},
      {"SPRSound-22 task 2, BS 50%", 86.81, 92.07, 89.44, 89.36, 89.40},
      {"SPRSound-22 task 2, BS 75%", 88.37, 90.50, 89.43, 89.42, 89.43},
      {"SPRSound-22 task 2, IS 50%", 89.93, 89.35, 89.64, 89.64, 89.64},
      {"SPRSound-22 task 2, IS 75%", 91.06, 88.06, 89.86, 89.84, 89.85},
      {"SPRSound-23 task 1, CNN-TSA", 91.10, 53.53, 72.31, 67.41, 69.86},
      {"SPRSound-23 task 1, BS 50%", 93.78, 51.95, 72.86, 66.86, 69.86},
      {"SPRSound-23 task 1, BS 75%", 91.46, 53.75, 72.61, 67.71, 70.16},
      {"SPRSound-23 task 1, IS 50%", 83.93, 59.76, 71.84, 69.81, 70.83},
      {"SPRSound-23 task 1, IS 75%", 88.32, 57.36, 72.84, 69.55, 71.20},
      {"SPRSound-23 task 2, CNN-TSA", 87.43, 77.93, 82.68, 82.41, 82.54},
      {"SPRSound-23 task 2, BS 50% (first)", 83.85, 81.68, 82.77, 82.75, 82.76},
      {"SPRSound-23 task 2, BS 50% (second)", 90.03, 76.43, 83.23, 82.67, 82.95},
      {"SPRSound-23 task 2, IS 50%", 88.00, 78.08, 83.04, 82.74, 82.89},
      {"SPRSound-23 task 2, IS 75%", 90.94, 76.92, 83.93, 82.47, 83.20},
  };
  return rows;
}

Outcome metric_oracle() {
  Outcome o;
  int matched = 0, tested = 0;
  bool named_ok = true;
  for (const auto& r : published_rows()) {
    const auto m = MetricReport::from_se_sp(r.se, r.sp);
    std::string bad;
    auto cmp = [&](const char* what, double got, double printed) {
      if (printed >= 0 && std::abs(got - printed) > 0.01 + 1e-9)
        bad += std::string(bad.empty() ? "" : ", ") + what + " " + fmt(got, 6) + " vs printed " + fmt(printed, 6);
    };
    cmp("AS", m.as, r.as);
    cmp("HS", m.hs, r.hs);
    cmp("TS", m.ts, r.ts);
    ++tested;
    if (bad.empty()) {
      ++matched;
      continue;
    }
    if ((r.sp == 73.21 && r.se == 37.89) || (r.sp == 90.39 && r.se == 75.46)) named_ok = false;
    o.details.push_back(std::string(r.name) + ": " + bad);
  }
  if (matched != tested || !named_ok) o.status = Status::kFail;
  o.summary = std::to_string(matched) + "/" + std::to_string(tested) + " published rows reproduced within 0.01" +
              (named_ok ? ", both named rows exact" : ", a named row failed");
  return o;
}

// ------------------------------------------------------------------ 2, 3

std::int64_t default_frames() {
  const FrontendConfig fe;
  const auto samples = static_cast<std::int64_t>(std::llround(fe.sample_rate * fe.target_seconds));
  return 1 + (samples - fe.win) / fe.hop;
}

Outcome flops_reduction() {
  Outcome o;
  std::ostringstream os;
  const auto frames = default_frames();
  for (auto [name, cfg] : {std::pair{"4-block", ModelConfig::icbhi()}, std::pair{"3-block", ModelConfig::sprsound()}}) {
    cfg.n_mels_in = 64;
    auto half = cfg;
    half.n_mels_in = 32;
    const double full = count_flops(cfg, frames).total();
    const double ratio = count_flops(half, frames).total() / full;
    if (ratio < 0.49 || ratio > 0.51) o.status = Status::kFail;
    os << name << " " << fmt(full / 1e9) << " -> " << fmt(full * ratio / 1e9) << " GFLOPs, ratio " << fmt(ratio, 5)
       << "; ";
  }
  o.summary = os.str() + "T=" + std::to_string(frames);
  return o;
}

Outcome parameter_counts() {
  Outcome o;
  auto a = ModelConfig::icbhi();
  auto b = ModelConfig::sprsound();
  const auto pa = parameter_count(a), pb = parameter_count(b);
  const double ra = static_cast<double>(pa) / 4.6e6, rb = static_cast<double>(pb) / 1.11e6;
  if (std::abs(ra - 1.0) > 0.1 || std::abs(rb - 1.0) > 0.1) o.status = Status::kFail;
  o.summary = "4-block " + std::to_string(pa) + " (" + fmt(ra * 100.0) + "% of 4.6 M), 3-block " + std::to_string(pb) +
              " (" + fmt(rb * 100.0) + "% of 1.11 M)";
  return o;
}

// ------------------------------------------------------------------ 4

Outcome gradient_integrity() {
  using testing::grad_check;
  using testing::random_tensor;
  using Fn = std::function<TensorD(const std::vector<TensorD>&)>;
  struct Case {
    std::string name;
    Fn fn;
    std::vector<Shape> shapes;
    double h = 1e-3;
  };
  ops::BatchNormStats bn_stats(3);
  std::vector<Case> cases{
      {"conv2d", [](const auto& in) { return ops::conv2d(in[0], in[1], 1, 0); }, {{2, 2, 5, 4}, {3, 2, 3, 2}}},
      {"conv2d padded", [](const auto& in) { return ops::conv2d(in[0], in[1], 1, 1); }, {{1, 3, 4, 4}, {2, 3, 3, 3}}},
      {"conv2d strided", [](const auto& in) { return ops::conv2d(in[0], in[1], 2, 1); }, {{1, 2, 6, 5}, {2, 2, 3, 3}}},
      {"batchnorm2d train",
       [&](const auto& in) { return ops::batchnorm2d(in[0], in[1], in[2], bn_stats, ops::NormMode::kTrain); },
       {{4, 3, 3, 2}, {3}, {3}}},
      {"batchnorm2d eval",
       [&](const auto& in) { return ops::batchnorm2d(in[0], in[1], in[2], bn_stats, ops::NormMode::kEval); },
       {{2, 3, 2, 2}, {3}, {3}}},
      {"relu", [](const auto& in) { return ops::relu(in[0]); }, {{3, 7}}},
      {"avg pool", [](const auto& in) { return ops::pool2d(in[0], ops::PoolKind::kAvg, 2, 2); }, {{2, 2, 4, 6}}},
      {"max pool", [](const auto& in) { return ops::pool2d(in[0], ops::PoolKind::kMax, 2, 2); }, {{2, 2, 4, 6}}},
      {"matmul", [](const auto& in) { return ops::matmul(in[0], in[1]); }, {{3, 4}, {4, 5}}},
      {"batched matmul", [](const auto& in) { return ops::matmul(in[0], in[1]); }, {{2, 3, 4}, {2, 4, 2}}},
      {"shared-operand matmul", [](const auto& in) { return ops::matmul(in[0], in[1]); }, {{2, 3, 4}, {4, 3}}},
      {"softmax last axis", [](const auto& in) { return ops::softmax(in[0], -1); }, {{3, 5}}},
      {"softmax middle axis", [](const auto& in) { return ops::softmax(in[0], 1); }, {{2, 4, 3}}},
      {"mean", [](const auto& in) { return ops::reduce(in[0], ops::ReduceKind::kMean, 1); }, {{2, 5, 3}}},
      {"max", [](const auto& in) { return ops::reduce(in[0], ops::ReduceKind::kMax, 2); }, {{2, 3, 6}}},
      {"sum", [](const auto& in) { return ops::reduce(in[0], ops::ReduceKind::kSum, 0); }, {{4, 3}}},
      {"add", [](const auto& in) { return ops::add(in[0], in[1]); }, {{2, 3}, {2, 3}}},
      {"add_bias", [](const auto& in) { return ops::add_bias(in[0], in[1]); }, {{2, 3, 4}, {4}}},
      {"scale", [](const auto& in) { return ops::scale(in[0], -1.7); }, {{5}}},
      {"reshape", [](const auto& in) { return ops::reshape(ops::relu(in[0]), {3, 4}); }, {{2, 6}}},
      {"permute", [](const auto& in) { return ops::permute(in[0], {2, 0, 1}); }, {{2, 3, 4}}},
      {"transpose_last", [](const auto& in) { return ops::transpose_last(in[0]); }, {{2, 3, 4}}},
      {"sum_all", [](const auto& in) { return ops::sum_all(in[0]); }, {{3, 3}}},
      {"frequency aggregation", [](const auto& in) { return aggregate_frequency(in[0]); }, {{2, 3, 4, 5}}},
      {"temporal self-attention",
       [](const auto& in) { return temporal_self_attention(in[0], in[1], in[2], in[3]).out; },
       {{2, 4, 8}, {8, 1}, {8, 1}, {8, 8}}},
      {"classification head", [](const auto& in) { return classify_head(in[0], in[1], in[2]); },
       {{2, 3, 6}, {6, 4}, {4}}},
  };
  const std::vector<int> labels{0, 1, 1};
  const std::vector<std::int64_t> counts{1, 2};
  cases.push_back({"weighted cross-entropy",
                   [&](const auto& in) { return wcce_loss(in[0], std::span<const int>(labels), std::span(counts)); },
                   {{3, 2}}});

  ModelConfig tiny;
  tiny.channels = {8};
  tiny.kernel_size = 3;
  tiny.n_classes = 2;
  tiny.n_mels_in = 8;
  const CnnTsa model(tiny, 16);
  BnStats stats;
  stats.emplace_back(8);
  Case full{"full tiny model",
            [&](const auto& in) {
              ModelParams<double> p;
              p.conv = {in[1]};
              p.gamma = {in[2]};
              p.beta = {in[3]};
              p.wq = in[4];
              p.wk = in[5];
              p.wv = in[6];
              p.head_w = in[7];
              p.head_b = in[8];
              return forward(in[0], tiny, p, stats, ops::NormMode::kTrain).logits;
            },
            {},
            1e-5};

  Outcome o;
  Rng rng(2024);
  int n = 0, failed = 0;
  for (const auto& c : cases) {
    std::vector<Tensor> inputs;
    for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng, -2.0, 2.0));
    testing::GradCheckOptions opt;
    opt.h = c.h;
    const auto res = grad_check(c.fn, inputs, rng, opt);
    ++n;
    if (!res.ok) {
      ++failed;
      o.details.push_back(c.name + " failed:\n" + res.report);
    }
  }
  {
    std::vector<Tensor> inputs{random_tensor({2, 1, 6, 8}, rng)};
    for (const auto& t : model.params().list()) inputs.push_back(t.detach());
    testing::GradCheckOptions opt;
    opt.h = full.h;
    opt.coords_per_input = 6;
    const auto res = grad_check(full.fn, inputs, rng, opt);
    ++n;
    if (!res.ok) {
      ++failed;
      o.details.push_back(full.name + " failed:\n" + res.report);
    }
  }
  if (failed > 0 || n < 20) o.status = Status::kFail;
  o.summary = std::to_string(n - failed) + "/" + std::to_string(n) + " randomized cases within rtol 1e-3";
  return o;
}

// ------------------------------------------------------------------ 5

Outcome attention_properties() {
  using testing::random_tensor;
  Outcome o;
  Rng rng(55);
  double worst_row = 0.0, worst_identity = 0.0, worst_uniform = 0.0, worst_perm = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t t = 2 + trial % 7, d = 8 * (1 + trial % 3);
    auto x = random_tensor({2, t, d}, rng, -3, 3);
    auto wq = random_tensor({d, d / 8}, rng, -2, 2), wk = random_tensor({d, d / 8}, rng, -2, 2);
    auto wv = random_tensor({d, d}, rng);
    auto att = temporal_self_attention(x, wq, wk, wv);
    for (int b = 0; b < 2; ++b)
      for (std::int64_t i = 0; i < t; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < t; ++j) s += att.weights.at({b, i, j});
        worst_row = std::max(worst_row, std::abs(s - 1.0));
      }

    auto x1 = random_tensor({2, 1, d}, rng);
    auto one = temporal_self_attention(x1, wq, wk, wv);
    const auto v1 = ops::matmul(x1, wv);
    for (float w : one.weights.data()) worst_identity = std::max(worst_identity, std::abs(w - 1.0));
    for (std::int64_t i = 0; i < v1.numel(); ++i)
      worst_identity = std::max(worst_identity, static_cast<double>(std::abs(one.out.data()[i] - v1.data()[i])));

    auto zero = temporal_self_attention(x, Tensor::zeros({d, d / 8}), wk, wv);
    for (float w : zero.weights.data()) worst_uniform = std::max(worst_uniform, std::abs(w - 1.0 / t));

    std::vector<std::int64_t> perm(static_cast<std::size_t>(t));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::int64_t i = t - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
    std::vector<float> xp(static_cast<std::size_t>(x.numel()));
    for (int b = 0; b < 2; ++b)
      for (std::int64_t i = 0; i < t; ++i)
        for (std::int64_t c = 0; c < d; ++c) xp[(b * t + i) * d + c] = x.at({b, perm[i], c});
    auto permuted = temporal_self_attention(Tensor::from({2, t, d}, xp), wq, wk, wv).out;
    for (int b = 0; b < 2; ++b)
      for (std::int64_t i = 0; i < t; ++i)
        for (std::int64_t c = 0; c < d; ++c)
          worst_perm = std::max(worst_perm,
                                static_cast<double>(std::abs(permuted.at({b, i, c}) - att.out.at({b, perm[i], c}))));
  }
  if (worst_row > 1e-6 || worst_identity > 1e-6 || worst_uniform > 1e-6 || worst_perm > 1e-5) o.status = Status::kFail;
  o.summary = "10 inputs: row-sum error " + fmt(worst_row, 3) + ", T=1 error " + fmt(worst_identity, 3) +
              ", zero-query uniform error " + fmt(worst_uniform, 3) + ", permutation error " + fmt(worst_perm, 3);
  return o;
}

// ------------------------------------------------------------------ 6

Outcome ig_axioms() {
  Outcome o;
  Rng rng(66);
  auto w = testing::random_tensor({2, 24}, rng);
  ScoreFn linear = [w](const Tensor& x) {
    const auto b = x.dim(0);
    return ops::matmul(ops::reshape(x, {b, x.numel() / b}), ops::transpose_last(w));
  };
  Spectrogram s;
  s.frames = 4;
  s.bands = 6;
  s.values.resize(24);
  for (auto& v : s.values) v = static_cast<float>(rng.uniform(-3.0, 1.0));
  double linear_err = 0.0;
  {
    IgConfig cfg;
    cfg.steps = 7;
    const auto a = integrated_gradients(linear, s, 1, cfg);
    for (int i = 0; i < 24; ++i) {
      const double expect = static_cast<double>(w.at({1, i})) * (static_cast<double>(s.values[i]) - cfg.baseline);
      linear_err = std::max(linear_err, std::abs(a.values[i] - expect) / std::max(1.0, std::abs(expect)));
    }
  }

  SynthSpec spec;
  spec.frames = 16;
  spec.bands = 32;
  spec.n_per_class = 60;
  spec.seed = 6;
  const auto data = synth_corpus(spec).items;
  ModelConfig cfg;
  cfg.channels = {8, 16};
  cfg.kernel_size = 3;
  cfg.n_classes = 2;
  cfg.placement = Placement::kAfterAggregation;
  TrainConfig tc;
  tc.epochs = 10;
  tc.batch_size = 16;
  tc.lr0 = 0.01f;
  tc.weight_decay = 0.0f;
  tc.augment = false;
  tc.seed = 6;
  const auto trained = train(data, cfg, tc);
  const auto rep = evaluate(trained.model, data, Task::kMulticlass);
  const auto scorer = model_scorer(trained.model);
  IgConfig ig;
  ig.steps = 200;
  ig.batch = 50;
  double worst = 0.0;
  int samples = 0;
  for (std::size_t i = 0; i < data.size(); i += data.size() / 10) {
    const auto& x = data[i];
    const int c = x.label;
    Spectrogram base = x;
    std::fill(base.values.begin(), base.values.end(), ig.baseline);
    const double gap = class_score(scorer, x, c) - class_score(scorer, base, c);
    const auto a = integrated_gradients(scorer, x, c, ig);
    double sum = 0.0;
    for (float v : a.values) sum += v;
    const double rel = std::abs(sum - gap) / std::abs(gap);
    worst = std::max(worst, rel);
    ++samples;
    o.details.push_back(x.id + ": sum " + fmt(sum, 6) + ", score gap " + fmt(gap, 6) + ", error " + fmt(rel * 100.0, 3) +
                        "%");
  }
  if (linear_err > 1e-5 || worst > 0.02) o.status = Status::kFail;
  o.summary = "linear model max error " + fmt(linear_err, 3) + "; trained model (train AS " + fmt(rep.as) + ") worst " +
              "completeness error " + fmt(worst * 100.0, 3) + "% over " + std::to_string(samples) + " samples at 200 steps";
  return o;
}

// ------------------------------------------------------------------ 7, 8

struct FbsRun {
  int planted_kept = 0;
  std::int64_t iterations = 0, candidates = 0, cv_runs = 0, trainings = 0, counter_delta = 0;
  double seconds = 0.0;
};

struct FbsStudy {
  std::vector<FbsRun> importance, backward;
  int folds = 0;
};

const FbsStudy& fbs_study() {
  static const FbsStudy study = [] {
    FbsStudy st;
    ModelConfig mc;
    mc.channels = {8};
    mc.kernel_size = 3;
    mc.n_classes = 2;
    mc.n_mels_in = 64;
    mc.placement = Placement::kAfterAggregation;
    FbsConfig fc;
    fc.lambda = 0.0;
    fc.folds = 3;
    fc.stop_epsilon = std::numeric_limits<double>::infinity();
    fc.min_bands = 32;
    st.folds = fc.folds;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SynthSpec sp;
      sp.frames = 8;
      sp.seed = seed;
      const auto corpus = synth_corpus(sp);
      const auto planted = sp.all_planted();
      TrainConfig tc;
      tc.epochs = 5;
      tc.batch_size = 16;
      tc.lr0 = 0.01f;
      tc.weight_decay = 0.0f;
      tc.augment = false;
      tc.seed = seed;
      for (int method = 0; method < 2; ++method) {
        const auto before = training_runs();
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = method == 0 ? fbs_importance(corpus.items, mc, tc, fc) : fbs_backward(corpus.items, mc, tc, fc);
        FbsRun r;
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.counter_delta = training_runs() - before;
        r.iterations = static_cast<std::int64_t>(res.iterations.size());
        for (const auto& it : res.iterations) r.candidates += static_cast<std::int64_t>(it.candidates.size());
        r.cv_runs = res.cv_runs;
        r.trainings = res.trainings;
        if (const auto* m = res.mask_with(32)) {
          for (int p : planted) r.planted_kept += m->keep[p] ? 1 : 0;
        }
        (method == 0 ? st.importance : st.backward).push_back(r);
      }
    }
    return st;
  }();
  return study;
}

Outcome fbs_recovery() {
  Outcome o;
  const auto& st = fbs_study();
  int imp_ok = 0, bwd_ok = 0;
  double seconds = 0.0;
  std::string imp_list, bwd_list;
  for (std::size_t i = 0; i < st.importance.size(); ++i) {
    imp_ok += st.importance[i].planted_kept >= 7;
    bwd_ok += st.backward[i].planted_kept >= 6;
    seconds += st.importance[i].seconds + st.backward[i].seconds;
    imp_list += (i ? " " : "") + std::to_string(st.importance[i].planted_kept);
    bwd_list += (i ? " " : "") + std::to_string(st.backward[i].planted_kept);
    o.details.push_back("seed " + std::to_string(i + 1) + ": importance " + std::to_string(st.importance[i].planted_kept) +
                        "/8 in " + fmt(st.importance[i].seconds, 3) + " s, backward " +
                        std::to_string(st.backward[i].planted_kept) + "/8 in " + fmt(st.backward[i].seconds, 3) + " s");
  }
  if (imp_ok < 4 || bwd_ok < 4 || seconds > 15 * 60) o.status = Status::kFail;
  o.summary = "planted bands kept at 32/64: importance [" + imp_list + "], backward [" + bwd_list + "]; " +
              std::to_string(imp_ok) + "/5 and " + std::to_string(bwd_ok) + "/5 seeds meet 7 and 6; " +
              fmt(seconds / 60.0, 3) + " min";
  return o;
}

Outcome complexity_accounting() {
  Outcome o;
  const auto& st = fbs_study();
  const auto k = static_cast<std::int64_t>(st.folds);
  std::int64_t imp_cv = 0, bwd_cv = 0;
  double imp_s = 0.0, bwd_s = 0.0;
  for (const auto& r : st.importance) {
    if (r.cv_runs != r.iterations || r.trainings != k * r.iterations || r.counter_delta != r.trainings)
      o.status = Status::kFail;
    imp_cv += r.cv_runs;
    imp_s += r.seconds;
  }
  for (const auto& r : st.backward) {
    if (r.cv_runs != r.candidates || r.trainings != k * r.candidates || r.counter_delta != r.trainings)
      o.status = Status::kFail;
    bwd_cv += r.cv_runs;
    bwd_s += r.seconds;
  }
  const auto n = static_cast<double>(st.importance.size());
  o.summary = "per run on 64 -> 32 bands: importance " + fmt(imp_cv / n) + " CV runs (= iterations), backward " +
              fmt(bwd_cv / n) + " CV runs (= sum of candidate windows), " + std::to_string(k) +
              " trainings each; counters agree; mean " + fmt(imp_s / n, 3) + " s vs " + fmt(bwd_s / n, 3) + " s";
  o.details.push_back("one CV run per importance iteration: F/r = 16 iterations to remove every band, O(F)");
  o.details.push_back("backward iteration i scores F/4 - i windows: O((F/4)^2) to remove every band");
  return o;
}

// ------------------------------------------------------------------ 9

Outcome learning_smoke() {
  Outcome o;
  SynthSpec spec;
  spec.frames = 8;
  spec.bands = 32;
  spec.n_per_class = 60;
  spec.seed = 1;
  const auto data = synth_corpus(spec).items;
  ModelConfig cfg;
  cfg.channels = {8};
  cfg.kernel_size = 3;
  cfg.n_classes = 2;
  cfg.placement = Placement::kAfterAggregation;
  cfg.n_mels_in = 32;
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 16;
  tc.lr0 = 0.01f;
  tc.weight_decay = 0.0f;
  tc.augment = false;
  tc.seed = 5;
  const auto res = train(data, cfg, tc);
  const auto rep = evaluate(res.model, data, Task::kMulticlass);

  std::vector<const Spectrogram*> batch;
  std::vector<int> labels;
  for (const auto& s : data) {
    batch.push_back(&s);
    labels.push_back(s.label);
  }
  const auto counts = class_counts(data, Task::kMulticlass, 2);
  double mean_w = 0.0;
  for (int y : labels) mean_w += 1.0 / static_cast<double>(counts[y]);
  mean_w /= static_cast<double>(labels.size());
  const double closed_form = std::log(2.0) * mean_w;
  double ratio_sum = 0.0;
  std::string ratios;
  const int seeds = 5;
  for (int seed = 0; seed < seeds; ++seed) {
    CnnTsa model(cfg, static_cast<std::uint64_t>(seed));
    const auto logits = model.logits(to_batch(batch), ops::NormMode::kTrain);
    const double r = wcce_loss(logits, labels, counts).item() / closed_form;
    ratio_sum += r;
    ratios += (seed ? " " : "") + fmt(r, 3);
  }
  const double ratio = ratio_sum / seeds;
  const bool learn_ok = rep.as > 95.0;
  const bool init_ok = std::abs(ratio - 1.0) <= 0.2;
  if (!learn_ok || !init_ok) o.status = Status::kFail;
  o.summary = "train AS " + fmt(rep.as) + " after 30 epochs" + (learn_ok ? "" : " (below 95)") +
              "; untrained loss / (log 2 * mean weight) = " + fmt(ratio, 3) + " over init seeds [" + ratios + "]" +
              (init_ok ? "" : ", outside 1 +/- 0.2");
  return o;
}

// ------------------------------------------------------------------ 10

Outcome data_census() {
  Outcome o;
  const char* icbhi = std::getenv("RESPIRA_ICBHI_ROOT");
  const char* spr = std::getenv("RESPIRA_SPRSOUND_ROOT");
  if (!icbhi && !spr) {
    o.status = Status::kSkip;
    o.summary = "set RESPIRA_ICBHI_ROOT and/or RESPIRA_SPRSOUND_ROOT to run";
    return o;
  }
  std::ostringstream os;
  if (icbhi) {
    const auto parsed = parse_icbhi(icbhi);
    std::vector<std::int64_t> counts(4, 0);
    for (const auto& r : parsed.records) ++counts[static_cast<std::size_t>(r.label)];
    const bool ok = parsed.records.size() == 6898 && counts == std::vector<std::int64_t>{3642, 1864, 886, 506};
    if (!ok) o.status = Status::kFail;
    os << "ICBHI " << parsed.records.size() << " cycles (" << counts[0] << "/" << counts[1] << "/" << counts[2] << "/"
       << counts[3] << ")";
  } else {
    os << "ICBHI skipped";
  }
  if (spr) {
    const auto parsed = parse_sprsound(spr, SprEdition::k2022);
    std::int64_t train_n = 0, test_n = 0;
    for (const auto& r : parsed.records) {
      if (r.split == "train") ++train_n;
      else if (r.split.rfind("test", 0) == 0) ++test_n;
    }
    if (train_n != 6656 || test_n != 2433) o.status = Status::kFail;
    os << "; SPRSound-2022 " << train_n << " train / " << test_n << " test events";
  } else {
    os << "; SPRSound skipped";
  }
  o.summary = os.str();
  return o;
}

// ------------------------------------------------------------------ 11

std::string g_cli;

Outcome cli_determinism() {
  Outcome o;
  if (g_cli.empty() || !fs::exists(g_cli)) {
    o.status = Status::kSkip;
    o.summary = "respira executable not available (build with RESPIRA_BUILD_TOOLS=ON)";
    return o;
  }
  const auto root = fs::temp_directory_path() / ("respira_determinism_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string model = " --channels 8 --kernel 3 --classes 2 --placement after_aggregation --lr 0.01 --batch 16";
  const std::vector<std::string> commands{
      "preprocess --dataset synth --cache cache/synth.bin --synth-frames 8 --synth-bands 32 --synth-per-class 30 "
      "--synth-seed 3",
      "train --cache cache/synth.bin --split all --epochs 4 --seed 7 --out run" + model,
      "fbs --cache cache/synth.bin --split all --epochs 2 --seed 7 --folds 2 --min-bands 24 --lambda 0 --out fbs" + model,
      "train --cache cache/synth.bin --split all --epochs 2 --seed 7 --mask fbs/mask.txt --out masked" + model,
      "evaluate --checkpoint run/model.ckpt --cache cache/synth.bin --split all --out eval",
      "attribute --checkpoint run/model.ckpt --cache cache/synth.bin --method ig --steps 20 --limit 2 --out ig",
      "attribute --checkpoint run/model.ckpt --cache cache/synth.bin --method gradcam --limit 2 --out gradcam",
      "flops --bands 32 --frames 8 --channels 8 --kernel 3 --classes 2 --placement after_aggregation "
      "--mask fbs/mask.txt --out flops.csv",
  };
  for (const char* tag : {"a", "b"}) {
    for (const auto& cmd : commands) {
      const auto line = g_cli + " --workdir " + (root / tag).string() + " " + cmd + " > /dev/null 2>&1";
      if (const int rc = std::system(line.c_str()); rc != 0) {
        o.status = Status::kFail;
        o.summary = "command failed (" + std::to_string(rc) + "): " + cmd;
        return o;
      }
    }
  }
  int files = 0, differ = 0;
  auto read = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "a");
    const auto name = rel.filename().string();
    if (name == "manifests.jsonl" || rel.extension() == ".lock") continue;
    ++files;
    const auto other = root / "b" / rel;
    if (!fs::exists(other) || read(e.path()) != read(other)) {
      ++differ;
      o.details.push_back("differs: " + rel.string());
    }
  }
  fs::remove_all(root);
  if (differ > 0 || files == 0) o.status = Status::kFail;
  o.summary = std::to_string(commands.size()) + " commands run twice; " + std::to_string(files - differ) + "/" +
              std::to_string(files) + " primary outputs byte-identical";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "metric oracle", metric_oracle},
      {2, "FLOPs reduction", flops_reduction},
      {3, "parameter counts", parameter_counts},
      {4, "gradient integrity", gradient_integrity},
      {5, "attention properties", attention_properties},
      {6, "IG axioms", ig_axioms},
      {7, "FBS planted-band recovery", fbs_recovery},
      {8, "complexity accounting", complexity_accounting},
      {9, "learning smoke test", learning_smoke},
      {10, "data-ingestion census", data_census},
      {11, "determinism", cli_determinism},
  };
  std::set<int> selected, known;
  std::string report_path;
#ifdef RESPIRA_CLI_PATH
  g_cli = RESPIRA_CLI_PATH;
#endif
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--known-failure" && i + 1 < argc) known.insert(std::atoi(argv[++i]));
    else if (a == "--cli" && i + 1 < argc) g_cli = argv[++i];
    else if (a == "--report" && i + 1 < argc) report_path = argv[++i];
    else selected.insert(std::atoi(a.c_str()));
  }
  std::ofstream report_file;
  if (!report_path.empty()) report_file.open(report_path);
  std::ostringstream out;
  auto flush = [&] {
    std::cout << out.str() << std::flush;
    if (report_file) report_file << out.str() << std::flush;
    out.str("");
  };
  std::set<int> failed;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.status = Status::kFail;
      o.summary = std::string("exception: ") + e.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Status::kPass ? "PASS" : o.status == Status::kFail ? "FAIL" : "SKIP";
    if (o.status == Status::kFail) failed.insert(c.id);
    out << "[" << tag << "] " << std::setw(2) << c.id << " " << c.name << ": " << o.summary << " (" << fmt(s, 3)
        << " s)" << (o.status == Status::kFail && known.count(c.id) ? " [known failure]" : "") << "\n";
    for (const auto& d : o.details) out << "        " << d << "\n";
    flush();
  }
  std::set<int> expected;
  for (int k : known)
    if (selected.empty() || selected.count(k)) expected.insert(k);
  out << failed.size() << " failed";
  if (!expected.empty()) out << ", " << expected.size() << " declared known failure(s)";
  out << "\n";
  flush();
  return failed == expected ? 0 : 1;
}

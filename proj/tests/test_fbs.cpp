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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "respira/data.hpp"
#include "respira/error.hpp"
#include "respira/fbs.hpp"

namespace respira {
namespace {

namespace fs = std::filesystem;

AttributionMap constant_map(int frames, std::vector<float> row, int class_id) {
  AttributionMap m;
  m.frames = frames;
  m.bands = static_cast<std::int64_t>(row.size());
  for (int t = 0; t < frames; ++t) m.values.insert(m.values.end(), row.begin(), row.end());
  m.class_id = class_id;
  return m;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.channels = {8};
  cfg.kernel_size = 3;
  cfg.n_classes = 2;
  cfg.placement = Placement::kAfterAggregation;
  return cfg;
}

TrainConfig quick_train(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.lr0 = 0.01f;
  cfg.weight_decay = 0.0f;
  cfg.augment = false;
  cfg.seed = 1;
  return cfg;
}

TEST(Mask, FullAndWithout) {
  auto m = FrequencyMask::full(10);
  EXPECT_EQ(m.kept(), 10);
  auto r = m.without({2, 3});
  EXPECT_EQ(r.kept(), 8);
  EXPECT_EQ(r.bits(), "1100111111");
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0], (std::vector<int>{2, 3}));
  EXPECT_NO_THROW(r.validate());
}

TEST(Mask, RemovingTwiceIsAnError) {
  auto m = FrequencyMask::full(10).without({2});
  EXPECT_THROW(m.without({2}), Error);
  EXPECT_THROW(m.without({10}), Error);
}

TEST(Mask, ValidateCatchesBadHistory) {
  auto m = FrequencyMask::full(10).without({1});
  m.keep[1] = true;
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(Mask, ApplyCompactsRows) {
  Spectrogram s;
  s.frames = 2;
  s.bands = 4;
  s.values = {0, 1, 2, 3, 4, 5, 6, 7};
  s.band_centers = {10, 20, 30, 40};
  auto out = apply_mask(s, FrequencyMask::full(4).without({1}));
  EXPECT_EQ(out.bands, 3);
  EXPECT_EQ(out.values, (std::vector<float>{0, 2, 3, 4, 6, 7}));
  EXPECT_EQ(out.band_centers, (std::vector<double>{10, 30, 40}));
}

TEST(Mask, ApplyRejectsWrongBandCount) {
  Spectrogram s;
  s.frames = 1;
  s.bands = 3;
  s.values = {1, 2, 3};
  EXPECT_THROW(apply_mask(s, FrequencyMask::full(4)), ShapeError);
}

TEST(Mask, FileRoundTrip) {
  auto m = FrequencyMask::full(16).without({0, 1, 2, 3}).without({8, 9, 10, 11});
  m.origin = MaskOrigin::kBackward;
  m.config_hash = "abc123";
  const auto path = (fs::temp_directory_path() / "respira_mask_rt.txt").string();
  save_mask(path, m);
  auto back = load_mask(path);
  EXPECT_EQ(back.keep, m.keep);
  EXPECT_EQ(back.history, m.history);
  EXPECT_EQ(back.origin, MaskOrigin::kBackward);
  EXPECT_EQ(back.config_hash, "abc123");
  fs::remove(path);
}

TEST(Mask, LoadErrorNamesLine) {
  const auto path = (fs::temp_directory_path() / "respira_mask_bad.txt").string();
  std::ofstream(path) << "respira-mask 1\nbands 4\norigin sideways\n";
  try {
    load_mask(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
  fs::remove(path);
}

TEST(Importance, PerClassMeanOfProfiles) {
  std::vector<AttributionMap> maps{constant_map(3, {1, 2, 3}, 0), constant_map(2, {3, 2, 1}, 0),
                                   constant_map(2, {9, 9, 9}, 1)};
  auto p = per_class_band_attribution(maps, 0, 0);
  EXPECT_EQ(p, (std::vector<double>{2, 2, 2}));
}

TEST(Importance, MissingClassNamesClassAndFold) {
  std::vector<AttributionMap> maps{constant_map(1, {1, 2}, 0)};
  try {
    per_class_band_attribution(maps, 2, 4);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("class 2"), std::string::npos);
    EXPECT_NE(msg.find("fold 4"), std::string::npos);
  }
}

TEST(Importance, FoldAverage) {
  EXPECT_EQ(fold_average({{1, 2}, {3, 6}}), (std::vector<double>{2, 4}));
  EXPECT_THROW(fold_average({}), ConfigError);
}

TEST(Importance, ScoreClosedForm) {
  // three classes, two bands
  auto t = importance_scores({{1.0, 0.5}, {0.4, 0.5}, {0.1, 0.5}}, 0.5);
  EXPECT_NEAR(t.mean[0], 0.5, 1e-12);
  EXPECT_NEAR(t.maxdiff[0], 0.9, 1e-12);
  EXPECT_NEAR(t.score[0], 0.05, 1e-12);
  EXPECT_NEAR(t.score[1], 0.5, 1e-12);
  EXPECT_NO_THROW(t.check());
}

TEST(Importance, LambdaZeroIsMean) {
  auto t = importance_scores({{0.3, -0.2, 0.9}, {0.1, 0.4, -0.5}}, 0.0);
  EXPECT_EQ(t.score, t.mean);
}

TEST(Importance, TwoClassHalfLambdaIsMinimum) {
  auto t = importance_scores({{0.3, -0.2}, {0.1, 0.4}}, 0.5);
  EXPECT_NEAR(t.score[0], 0.1, 1e-12);
  EXPECT_NEAR(t.score[1], -0.2, 1e-12);
}

TEST(Importance, LambdaOutOfRange) {
  EXPECT_THROW(importance_scores({{1.0}}, 1.5), ConfigError);
  EXPECT_THROW(importance_scores({{1.0}}, -0.1), ConfigError);
}

TEST(Eliminate, DropsLowestWithLowerIndexOnTies) {
  ImportanceTable t = importance_scores({{5, 1, 3, 1, 1, 9, 8, 7, 6, 4, 2, 0}}, 0.0);
  auto next = eliminate_lowest(t, FrequencyMask::full(12), 4, 8);
  ASSERT_TRUE(next);
  EXPECT_EQ(next->history.back(), (std::vector<int>{1, 3, 4, 11}));
}

TEST(Eliminate, IgnoresRemovedBands) {
  auto mask = FrequencyMask::full(12).without({0});
  auto t = importance_scores({{-9, 1, 3, 1, 1, 9, 8, 7, 6, 4, 2, 0}}, 0.0);
  t.mean[0] = t.maxdiff[0] = t.score[0] = std::nan("");
  auto next = eliminate_lowest(t, mask, 2, 8);
  ASSERT_TRUE(next);
  EXPECT_EQ(next->history.back(), (std::vector<int>{1, 11}));
}

TEST(Eliminate, StopsAtFloor) {
  auto t = importance_scores({std::vector<double>(10, 1.0)}, 0.0);
  EXPECT_FALSE(eliminate_lowest(t, FrequencyMask::full(10), 4, 8));
  EXPECT_THROW(eliminate_lowest(t, FrequencyMask::full(11), 1, 8), ShapeError);
}

TEST(Windows, AdjacentKeptBands) {
  auto mask = FrequencyMask::full(10).without({3, 4});
  auto w = candidate_windows(mask, 4);
  ASSERT_EQ(w.size(), 5u);
  EXPECT_EQ(w[0], (std::vector<int>{0, 1, 2, 5}));
  EXPECT_EQ(w[4], (std::vector<int>{6, 7, 8, 9}));
}

TEST(FbsConfig, Validation) {
  FbsConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.folds = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.min_bands = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

class FbsRun : public ::testing::Test {
 protected:
  static std::vector<Spectrogram> corpus(int bands) {
    SynthSpec spec;
    spec.frames = 8;
    spec.bands = bands;
    spec.n_per_class = 30;
    spec.n_patients = 10;
    spec.seed = 2;
    return synth_corpus(spec).items;
  }
};

TEST_F(FbsRun, ImportanceCountersAndTrajectory) {
  FbsConfig cfg;
  cfg.folds = 2;
  cfg.lambda = 0.0;
  cfg.stop_epsilon = std::numeric_limits<double>::infinity();
  cfg.min_bands = 20;
  int callbacks = 0;
  auto res = fbs_importance(corpus(32), tiny_model(), quick_train(2), cfg, [&](const FbsIteration&) { ++callbacks; });
  ASSERT_EQ(res.iterations.size(), 4u);
  EXPECT_EQ(res.cv_runs, 4);
  EXPECT_EQ(res.trainings, 4 * cfg.folds);
  EXPECT_EQ(callbacks, 4);
  for (std::size_t i = 0; i < res.iterations.size(); ++i) {
    const auto& it = res.iterations[i];
    EXPECT_EQ(it.mask.kept(), 32 - 4 * static_cast<int>(i));
    EXPECT_NO_THROW(it.mask.validate());
    EXPECT_EQ(it.table.has_value(), i + 1 < res.iterations.size());
    if (it.table) {
      it.table->check();
      for (int f = 0; f < 32; ++f) EXPECT_EQ(std::isnan(it.table->score[f]), !it.mask.keep[f]);
    }
  }
  double best = -1.0;
  for (const auto& it : res.iterations) best = std::max(best, it.mean_as);
  EXPECT_EQ(res.best_as, best);
  EXPECT_EQ(res.best.origin, MaskOrigin::kImportance);
  ASSERT_NE(res.mask_with(24), nullptr);
  EXPECT_EQ(res.mask_with(23), nullptr);
  EXPECT_FALSE(res.stop_reason.empty());
}

TEST_F(FbsRun, BackwardCountsCandidates) {
  FbsConfig cfg;
  cfg.folds = 2;
  cfg.stop_epsilon = std::numeric_limits<double>::infinity();
  auto res = fbs_backward(corpus(16), tiny_model(), quick_train(1), cfg);
  ASSERT_EQ(res.iterations.size(), 2u);
  EXPECT_EQ(res.iterations[0].candidates.size(), 13u);
  EXPECT_EQ(res.iterations[1].candidates.size(), 9u);
  EXPECT_EQ(res.cv_runs, 22);
  EXPECT_EQ(res.trainings, 22 * cfg.folds);
  for (const auto& it : res.iterations) {
    double top = -1.0;
    for (const auto& c : it.candidates) top = std::max(top, c.mean_as);
    EXPECT_EQ(it.mean_as, top);
  }
  EXPECT_EQ(res.iterations.back().mask.kept(), 8);
  EXPECT_EQ(res.best.origin, MaskOrigin::kBackward);
}

TEST_F(FbsRun, DeterministicForSeed) {
  FbsConfig cfg;
  cfg.folds = 2;
  cfg.lambda = 0.0;
  cfg.min_bands = 24;
  cfg.stop_epsilon = std::numeric_limits<double>::infinity();
  auto a = fbs_importance(corpus(32), tiny_model(), quick_train(1), cfg);
  auto b = fbs_importance(corpus(32), tiny_model(), quick_train(1), cfg);
  ASSERT_EQ(a.iterations.size(), b.iterations.size());
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    EXPECT_EQ(a.iterations[i].mask.keep, b.iterations[i].mask.keep);
    EXPECT_EQ(a.iterations[i].mean_as, b.iterations[i].mean_as);
  }
}

TEST_F(FbsRun, ImportanceFindsPlantedBands) {
  SynthSpec spec;
  spec.frames = 8;
  spec.seed = 3;
  auto data = synth_corpus(spec).items;
  FbsConfig cfg;
  cfg.folds = 3;
  cfg.lambda = 0.0;
  cfg.min_bands = 32;
  cfg.stop_epsilon = std::numeric_limits<double>::infinity();
  auto res = fbs_importance(data, tiny_model(), quick_train(5), cfg);
  const auto* half = res.mask_with(32);
  ASSERT_NE(half, nullptr);
  int kept = 0;
  for (int f : spec.all_planted()) kept += half->keep[f] ? 1 : 0;
  EXPECT_GE(kept, 7);
}

TEST_F(FbsRun, CurveOutputs) {
  FbsConfig cfg;
  cfg.folds = 2;
  cfg.min_bands = 24;
  auto res = fbs_importance(corpus(32), tiny_model(), quick_train(1), cfg);
  const auto dir = fs::temp_directory_path();
  write_fbs_curve_csv((dir / "respira_curve.csv").string(), res);
  write_importance_csv((dir / "respira_imp.csv").string(), *res.iterations[0].table, res.iterations[0].mask);
  std::ifstream is(dir / "respira_imp.csv");
  std::string line;
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 33);
  const auto svg = fbs_curve_svg(res, 32);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  fs::remove(dir / "respira_curve.csv");
  fs::remove(dir / "respira_imp.csv");
}

}  // namespace
}  // namespace respira

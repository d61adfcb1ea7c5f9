/*
 * Copyright 2026 The pcbm Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>

#include "pcbm/errors.h"
#include "pcbm/pipeline.h"
#include "test_util.h"

namespace pcbm {
namespace {

using testing::TempDir;

const TrainedScenario& Trained() {
  static const TrainedScenario t = [] {
    const ShiftSetup s = DefaultShiftSetup(4);
    PipelineConfig cfg;
    cfg.seed = 4;
    return TrainScenario(GenerateShiftScenario(s.spec, s.shifted_class, s.spurious_concept), cfg,
                         "four");
  }();
  return t;
}

TEST(Pipeline, ConfigJsonRoundTrip) {
  PipelineConfig cfg;
  cfg.svm.regularization_c = 0.3;
  cfg.pcbm.lambda = 0.2;
  cfg.pcbm.loss = LossKind::kPerClassBinaryCrossEntropy;
  cfg.residual.batch_size = 4;
  cfg.select_lambda = true;
  cfg.seed = 99;
  const PipelineConfig back = PipelineConfigFromJson(ToJson(cfg));
  EXPECT_EQ(ToJson(back), ToJson(cfg));
  EXPECT_EQ(back.pcbm, cfg.pcbm);
  EXPECT_EQ(back.residual, cfg.residual);
  EXPECT_EQ(PipelineConfigFromJson(nlohmann::json::object()).pcbm, PCBMConfig{});
  EXPECT_THROW(PipelineConfigFromJson({{"pcbm", {{"lambda", "big"}}}}), FormatError);
}

TEST(Pipeline, SplitsTheTestDomain) {
  const TrainedScenario& t = Trained();
  const std::size_t n = t.adapt_dataset.size() + t.heldout_dataset.size();
  EXPECT_EQ(n, DefaultShiftSetup(4).spec.n_test);
  EXPECT_EQ(t.adapt.projections.rows(), t.adapt_dataset.size());
  EXPECT_EQ(t.heldout.embeddings, t.heldout_dataset.embeddings);
  EXPECT_EQ(t.hybrid.pcbm, t.pcbm);
}

TEST(Pipeline, SaveLoadRoundTrip) {
  TempDir dir;
  const TrainedScenario& t = Trained();
  SaveTrainedScenario(t, dir / "s");
  const TrainedScenario back = LoadTrainedScenario(dir / "s");
  EXPECT_EQ(back.name, "four");
  EXPECT_EQ(back.shifted_class, t.shifted_class);
  EXPECT_EQ(back.spurious_concept, t.spurious_concept);
  EXPECT_EQ(back.bank, t.bank);
  EXPECT_EQ(back.pcbm, t.pcbm);
  EXPECT_EQ(back.hybrid, t.hybrid);
  EXPECT_EQ(back.heldout_dataset, t.heldout_dataset);
  EXPECT_EQ(back.adapt.projections, t.adapt.projections);
  EXPECT_EQ(HeldoutClassAccuracy(back, back.pcbm), HeldoutClassAccuracy(t, t.pcbm));
}

TEST(Pipeline, BaselinesMatchTheUserCount) {
  const TrainedScenario& t = Trained();
  const auto pool = TopPositivePool(t.pcbm, t.shifted_class, 10);
  ASSERT_GE(pool.size(), 2u);
  const std::vector<std::size_t> user = {pool[0], pool[1]};
  const Baselines b = ComputeBaselines(t, user, 7, 20);
  EXPECT_EQ(b.count, 2u);
  EXPECT_EQ(b.greedy_selection.size(), 2u);
  EXPECT_EQ(b.random_draws, 20);
  EXPECT_EQ(b.unedited, HeldoutClassAccuracy(t, t.pcbm));
  const auto edited = PruneNormalizeOrFallback(t.pcbm, t.shifted_class, user).model;
  EXPECT_EQ(b.user, HeldoutClassAccuracy(t, edited));
  const Baselines again = ComputeBaselines(t, user, 7, 20);
  EXPECT_EQ(again.random, b.random);
  EXPECT_EQ(again.greedy_selection, b.greedy_selection);
}

TEST(Pipeline, EmptySelectionLeavesEverythingUnedited) {
  const TrainedScenario& t = Trained();
  const Baselines b = ComputeBaselines(t, {}, 1, 5);
  EXPECT_EQ(b.count, 0u);
  EXPECT_EQ(b.user, b.unedited);
  EXPECT_EQ(b.random, b.unedited);
  EXPECT_EQ(b.greedy, b.unedited);
  EXPECT_TRUE(b.greedy_selection.empty());
  EXPECT_EQ(b.hybrid_user, b.hybrid_unedited);
}

TEST(Pipeline, UserConceptsMustComeFromThePool) {
  const TrainedScenario& t = Trained();
  const auto pool = TopPositivePool(t.pcbm, t.shifted_class, 10);
  std::size_t outside = 0;
  while (std::find(pool.begin(), pool.end(), outside) != pool.end()) ++outside;
  EXPECT_THROW(ComputeBaselines(t, {outside}, 1, 5), ValidationError);
}

TEST(Pipeline, SpuriousPruneHelpsOnTheShiftedClass) {
  const StrategyComparison c = CompareStrategies(Trained());
  EXPECT_TRUE(c.spurious_prunable);
  EXPECT_GT(c.prune_normalize, c.unedited);
  EXPECT_GT(c.fine_tune, c.unedited);
}

TEST(Pipeline, Summarize) {
  const MeanStderr a = Summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(a.mean, 2.5);
  EXPECT_NEAR(a.stderr_, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
  EXPECT_EQ(Summarize({3.0}).stderr_, 0.0);
}

}  // namespace
}  // namespace pcbm

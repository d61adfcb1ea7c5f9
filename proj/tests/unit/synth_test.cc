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
#include "pcbm/synth.h"
#include "test_util.h"

namespace pcbm {
namespace {

using testing::TempDir;

double DotRows(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += a(i, c) * b(j, c);
  return s;
}

TEST(Synth, DirectionsAreOrthonormal) {
  const Matrix g = OrthonormalRows(9, 32, 4);
  for (std::size_t i = 0; i < 9; ++i) {
    for (std::size_t j = 0; j < 9; ++j) {
      EXPECT_NEAR(DotRows(g, i, g, j), i == j ? 1.0 : 0.0, 1e-9);
    }
  }
  EXPECT_EQ(OrthonormalRows(9, 32, 4), g);
  EXPECT_THROW(OrthonormalRows(5, 4, 1), ArgumentError);
}

TEST(Synth, NoiselessRowsAreConceptSums) {
  SynthSpec spec;
  spec.noise_sigma = 0.0;
  spec.n_train = 40;
  const SynthData s = GenerateDataset(spec);
  const Matrix& g = s.planted_directions;
  for (std::size_t r = 0; r < 40; ++r) {
    for (std::size_t j = 0; j < spec.d; ++j) {
      double v = 0;
      for (std::size_t i = 0; i < spec.num_concepts; ++i) v += s.indicators(r, i) * g(i, j);
      EXPECT_NEAR(s.dataset.embeddings(r, j), v, 1e-12);
    }
  }
}

TEST(Synth, BaselineAndHiddenOffsetEnterTheEmbedding) {
  SynthSpec spec;
  spec.noise_sigma = 0.0;
  spec.n_train = 30;
  spec.latent_baseline = 0.5;
  spec.hidden_offsets = {1.0, 0.0, -1.0, 0.5, 0.0};
  const SynthData s = GenerateDataset(spec);
  ASSERT_EQ(s.hidden_direction.size(), spec.d);
  Matrix h(1, spec.d);
  for (std::size_t j = 0; j < spec.d; ++j) h(0, j) = s.hidden_direction[j];
  for (std::size_t i = 0; i < spec.num_concepts; ++i) {
    EXPECT_NEAR(DotRows(h, 0, s.planted_directions, i), 0.0, 1e-9);
  }
  const auto& ids = s.dataset.labels.class_ids();
  for (std::size_t r = 0; r < 30; ++r) {
    EXPECT_NEAR(DotRows(s.dataset.embeddings, r, h, 0), spec.hidden_offsets[ids[r]], 1e-9);
    for (std::size_t i = 0; i < spec.num_concepts; ++i) {
      EXPECT_NEAR(DotRows(s.dataset.embeddings, r, s.planted_directions, i),
                  s.indicators(r, i) - 0.5, 1e-9);
    }
  }
}

TEST(Synth, DefaultConceptFrequencyIsHalf) {
  SynthSpec spec;
  spec.n_train = 2000;
  const SynthData s = GenerateDataset(spec);
  for (std::size_t i = 0; i < spec.num_concepts; ++i) {
    double on = 0;
    for (std::size_t r = 0; r < spec.n_train; ++r) on += s.indicators(r, i);
    EXPECT_NEAR(on / static_cast<double>(spec.n_train), 0.5, 0.05) << i;
  }
}

TEST(Synth, ConceptExamplesAreExactPairs) {
  const SynthData s = GenerateDataset(SynthSpec{});
  ASSERT_EQ(s.concept_examples.size(), 8u);
  for (const auto& e : s.concept_examples) {
    EXPECT_EQ(e.positives.rows(), 50u);
    EXPECT_EQ(e.negatives.rows(), 50u);
  }
  EXPECT_EQ(s.concept_names, SynthConceptNames(8));
}

TEST(Synth, ShiftForcesTheSpuriousConcept) {
  const ShiftSetup setup = DefaultShiftSetup(3);
  const ShiftScenario sc = GenerateShiftScenario(setup.spec, setup.shifted_class, setup.spurious_concept);
  const auto& tr = sc.train.labels.class_ids();
  const auto& te = sc.test.labels.class_ids();
  std::size_t train_hits = 0, test_hits = 0;
  for (std::size_t r = 0; r < tr.size(); ++r) {
    if (tr[r] != setup.shifted_class) continue;
    ++train_hits;
    EXPECT_EQ(sc.train_indicators(r, setup.spurious_concept), 1.0);
  }
  for (std::size_t r = 0; r < te.size(); ++r) {
    if (te[r] != setup.shifted_class) continue;
    ++test_hits;
    EXPECT_EQ(sc.test_indicators(r, setup.spurious_concept), 0.0);
  }
  EXPECT_GT(train_hits, 0u);
  EXPECT_GT(test_hits, 0u);
  EXPECT_NE(setup.confuser_class, setup.shifted_class);
}

TEST(Synth, DeterministicAndSeedSensitive) {
  const ShiftSetup setup = DefaultShiftSetup(5);
  const auto a = GenerateShiftScenario(setup.spec, setup.shifted_class, setup.spurious_concept);
  const auto b = GenerateShiftScenario(setup.spec, setup.shifted_class, setup.spurious_concept);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  SynthSpec other = setup.spec;
  other.seed += 1;
  const auto c = GenerateShiftScenario(other, setup.shifted_class, setup.spurious_concept);
  EXPECT_NE(a.train.embeddings, c.train.embeddings);
}

TEST(Synth, SpecJsonRoundTrip) {
  const SynthSpec spec = HiddenSignalSpec(2);
  const SynthSpec back = SynthSpecFromJson(ToJson(spec));
  EXPECT_EQ(ToJson(back), ToJson(spec));
  EXPECT_EQ(back.concept_class_probs, spec.concept_class_probs);
}

TEST(Synth, ScenarioSaveLoad) {
  TempDir dir;
  const ShiftSetup setup = DefaultShiftSetup(1);
  const auto sc = GenerateShiftScenario(setup.spec, setup.shifted_class, setup.spurious_concept);
  SaveScenario(sc, dir / "s");
  const ShiftScenario back = LoadScenario(dir / "s");
  EXPECT_EQ(back.train, sc.train);
  EXPECT_EQ(back.test, sc.test);
  EXPECT_EQ(back.planted_directions, sc.planted_directions);
  EXPECT_EQ(back.shifted_class, sc.shifted_class);
  EXPECT_EQ(back.spurious_concept, sc.spurious_concept);
  ASSERT_EQ(back.concept_examples.size(), sc.concept_examples.size());
  for (std::size_t i = 0; i < sc.concept_examples.size(); ++i) {
    EXPECT_EQ(back.concept_examples[i].positives, sc.concept_examples[i].positives);
    EXPECT_EQ(back.concept_examples[i].negatives, sc.concept_examples[i].negatives);
  }
}

TEST(Synth, SpuriousConceptSurfacesInExplanations) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ShiftSetup s = DefaultShiftSetup(seed);
    PipelineConfig cfg;
    cfg.seed = seed;
    const auto t = TrainScenario(GenerateShiftScenario(s.spec, s.shifted_class, s.spurious_concept), cfg);
    hits += CompareStrategies(t).spurious_in_top3;
  }
  EXPECT_GE(hits, 8);
}

}  // namespace
}  // namespace pcbm

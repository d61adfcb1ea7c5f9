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

#include <algorithm>
#include <cmath>

#include "pcbm/concept_bank.h"
#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "pcbm/random.h"
#include "test_util.h"

namespace pcbm {
namespace {

using testing::RandomMatrix;
using testing::TempDir;

double Cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

ConceptBank RandomBank(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<NamedVector> v;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> c(d);
    for (double& x : c) x = rng.Normal();
    v.emplace_back("concept_" + std::to_string(i), std::move(c));
  }
  return BuildBankFromText(v);
}

TEST(Project, WorkedExamples) {
  const ConceptBank bank = BuildBankFromText({{"a", {2, 0}}, {"b", {1, 1}}});
  const Matrix p = Project(bank, Matrix::FromRows({{4, 2}, {-1, 3}}));
  EXPECT_DOUBLE_EQ(p(0, 0), 2.0);   // 8 / 4
  EXPECT_DOUBLE_EQ(p(0, 1), 3.0);   // 6 / 2
  EXPECT_DOUBLE_EQ(p(1, 0), -0.5);  // -2 / 4
  EXPECT_DOUBLE_EQ(p(1, 1), 1.0);   // 2 / 2
}

TEST(Project, IdentityBasisReturnsCoordinates) {
  Rng rng(3);
  const std::size_t d = 7;
  std::vector<NamedVector> basis;
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<double> e(d, 0.0);
    e[i] = 1.0;
    basis.emplace_back("e" + std::to_string(i), e);
  }
  const Matrix x = RandomMatrix(rng, 20, d);
  EXPECT_EQ(Project(BuildBankFromText(basis), x), x);
}

TEST(Project, MatchesIndependentLoop) {
  Rng rng(5);
  const ConceptBank bank = RandomBank(rng, 13, 9);
  const Matrix x = RandomMatrix(rng, 31, 9);
  const Matrix p = Project(bank, x);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < bank.size(); ++i) {
      long double dot = 0, sq = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        dot += static_cast<long double>(x(r, j)) * bank[i].vector[j];
        sq += static_cast<long double>(bank[i].vector[j]) * bank[i].vector[j];
      }
      EXPECT_NEAR(p(r, i), static_cast<double>(dot / sq), 1e-12);
    }
  }
}

TEST(Project, ScalingInvariance) {
  Rng rng(8);
  const ConceptBank bank = RandomBank(rng, 6, 5);
  const Matrix x = RandomMatrix(rng, 10, 5);
  const Matrix base = Project(bank, x);
  // Powers of two scale exactly, so these hold bit for bit.
  for (double s : {0.25, 2.0, 8.0}) {
    std::vector<NamedVector> scaled;
    for (const auto& c : bank.concepts()) {
      std::vector<double> v = c.vector;
      for (double& e : v) e *= s;
      scaled.emplace_back(c.name, v);
    }
    const Matrix p = Project(BuildBankFromText(scaled), x);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      for (std::size_t i = 0; i < p.cols(); ++i) EXPECT_EQ(p(r, i) * s, base(r, i));
    }
    Matrix xs = x;
    for (std::size_t r = 0; r < xs.rows(); ++r) {
      for (double& e : xs.row(r)) e *= s;
    }
    const Matrix q = Project(bank, xs);
    for (std::size_t r = 0; r < q.rows(); ++r) {
      for (std::size_t i = 0; i < q.cols(); ++i) EXPECT_EQ(q(r, i), base(r, i) * s);
    }
  }
  // Arbitrary scales agree to rounding.
  std::vector<NamedVector> scaled;
  for (const auto& c : bank.concepts()) {
    std::vector<double> v = c.vector;
    for (double& e : v) e *= 3.7;
    scaled.emplace_back(c.name, v);
  }
  const Matrix p = Project(BuildBankFromText(scaled), x);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    for (std::size_t i = 0; i < p.cols(); ++i) {
      EXPECT_NEAR(p(r, i) * 3.7, base(r, i), 1e-12 * (1 + std::abs(base(r, i))));
    }
  }
}

TEST(Project, ConceptPermutationPermutesColumns) {
  Rng rng(9);
  const ConceptBank bank = RandomBank(rng, 5, 4);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<ConceptVector> shuffled;
  for (std::size_t i : perm) shuffled.push_back(bank[i]);
  const Matrix x = RandomMatrix(rng, 8, 4);
  const Matrix a = Project(bank, x);
  const Matrix b = Project(ConceptBank(shuffled), x);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(b(r, i), a(r, perm[i]));
  }
}

TEST(Project, DimensionMismatch) {
  const ConceptBank bank = BuildBankFromText({{"a", {1, 0, 0}}});
  EXPECT_THROW(Project(bank, Matrix(2, 2)), ArgumentError);
}

TEST(ConceptBank, RejectsDuplicatesZeroAndRagged) {
  EXPECT_THROW(BuildBankFromText({{"a", {1, 0}}, {"a", {0, 1}}}), ArgumentError);
  EXPECT_THROW(BuildBankFromText({{"a", {0, 0}}}), ValidationError);
  EXPECT_THROW(BuildBankFromText({{"a", {1, 0}}, {"b", {1, 0, 0}}}), ArgumentError);
  ConceptVector stale{"s", {1.0, 1.0}, 1.0};
  EXPECT_THROW(ConceptBank({stale}), ValidationError);
}

TEST(ConceptBank, LooksUpNames) {
  const ConceptBank bank = BuildBankFromText({{"red", {1, 0}}, {"blue", {0, 1}}});
  EXPECT_EQ(bank.IndexOf("blue"), 1u);
  EXPECT_FALSE(bank.IndexOf("green").has_value());
  EXPECT_EQ(bank.names(), (std::vector<std::string>{"red", "blue"}));
  EXPECT_EQ(bank[0].source, ConceptSource::kText);
  EXPECT_EQ(bank[0].margin_accuracy, 1.0);
}

TEST(ConceptBank, TextBankMatchesEmbeddings) {
  Rng rng(206);
  const ConceptBank bank = RandomBank(rng, 206, 64);
  EXPECT_EQ(bank.size(), 206u);
  const Matrix x = RandomMatrix(rng, 4, 64);
  const Matrix p = Project(bank, x);
  EXPECT_EQ(p.cols(), 206u);
  for (std::size_t i = 0; i < 206; i += 41) {
    double dot = 0;
    for (std::size_t j = 0; j < 64; ++j) dot += x(1, j) * bank[i].vector[j];
    EXPECT_NEAR(p(1, i), dot / bank[i].squared_norm, 1e-12);
  }
}

TEST(ConceptBank, SaveLoadRoundTrip) {
  TempDir dir;
  Rng rng(1);
  const ConceptBank bank = RandomBank(rng, 12, 7);
  SaveConceptBank(bank, dir / "bank");
  EXPECT_EQ(LoadConceptBank(dir / "bank"), bank);

  auto bytes = ReadFileBytes(dir / "bank" / "vectors.emb1");
  bytes[kEmb1HeaderSize + 3] ^= 0x10;
  WriteFileBytes(dir / "bank" / "vectors.emb1", bytes);
  EXPECT_THROW(LoadConceptBank(dir / "bank"), IntegrityError);
}

TEST(ConceptBank, NamedVectorDirectory) {
  TempDir dir;
  const std::vector<NamedVector> v = {{"wing", {1, 2, 3}}, {"beak", {0.5, 0, -1}}};
  SaveNamedVectors(v, dir / "nv");
  EXPECT_EQ(LoadNamedVectors(dir / "nv"), v);
  WriteJsonFile(dir / "nv" / "names.json", nlohmann::json::array({"wing"}));
  EXPECT_THROW(LoadNamedVectors(dir / "nv"), FormatError);
}

// ------------------------------------------------------------------- SVM

struct Problem {
  Matrix x;
  std::vector<int> y;
};

Problem AxisSeparable(std::uint64_t seed, std::size_t per_side, std::size_t d) {
  Rng rng(seed);
  Problem p{Matrix(2 * per_side, d), {}};
  for (std::size_t r = 0; r < 2 * per_side; ++r) {
    const int label = r < per_side ? 1 : -1;
    p.y.push_back(label);
    p.x(r, 0) = label * (1.0 + 0.2 * rng.Uniform());
    for (std::size_t j = 1; j < d; ++j) p.x(r, j) = 0.1 * rng.Normal();
  }
  return p;
}

TEST(Svm, AxisSeparableRecoversTheAxis) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Problem p = AxisSeparable(seed, 50, 16);
    SvmConfig cfg;
    cfg.seed = seed;
    const SvmSolution s = TrainLinearSvm(p.x, p.y, cfg);
    std::vector<double> axis(16, 0.0);
    axis[0] = 1.0;
    EXPECT_GE(Cosine(s.weights, axis), 0.99) << "seed " << seed;
    EXPECT_EQ(s.train_accuracy, 1.0);
    for (std::size_t r = 0; r < p.x.rows(); ++r) {
      double score = s.bias;
      for (std::size_t j = 0; j < 16; ++j) score += s.weights[j] * p.x(r, j);
      EXPECT_GT(p.y[r] * score, 0.0);
    }
  }
}

TEST(Svm, ObjectiveMatchesBruteForceGrid) {
  // Overlapping 2-D classes; the grid minimum bounds the exact optimum from
  // above, and the grid is fine enough that it sits close to it.
  Rng rng(17);
  Problem p{Matrix(30, 2), {}};
  for (std::size_t r = 0; r < 30; ++r) {
    const int label = r % 2 == 0 ? 1 : -1;
    p.y.push_back(label);
    p.x(r, 0) = 0.6 * label + 0.5 * rng.Normal();
    p.x(r, 1) = -0.3 * label + 0.5 * rng.Normal();
  }
  SvmConfig cfg;
  cfg.regularization_c = 1.0;
  cfg.max_epochs = 2000;
  cfg.tolerance = 1e-9;
  const SvmSolution s = TrainLinearSvm(p.x, p.y, cfg);

  double best = std::numeric_limits<double>::infinity();
  for (int i = -120; i <= 120; ++i) {
    for (int j = -120; j <= 120; ++j) {
      const std::vector<double> w = {i * 0.025, j * 0.025};
      for (int k = -40; k <= 40; ++k) {
        best = std::min(best, SvmObjective(w, k * 0.025, p.x, p.y, 1.0));
      }
    }
  }
  EXPECT_NEAR(s.objective, SvmObjective(s.weights, s.bias, p.x, p.y, 1.0), 1e-12);
  EXPECT_LE(s.objective, best * 1.01);
  EXPECT_GE(s.objective, best * 0.97);
}

TEST(Svm, DeterministicUnderSeed) {
  const Problem p = AxisSeparable(3, 30, 6);
  SvmConfig cfg;
  cfg.seed = 4;
  const SvmSolution a = TrainLinearSvm(p.x, p.y, cfg);
  const SvmSolution b = TrainLinearSvm(p.x, p.y, cfg);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
}

TEST(Svm, RejectsBadInput) {
  const Problem p = AxisSeparable(3, 3, 2);
  std::vector<int> y = p.y;
  y[0] = 0;
  EXPECT_THROW(TrainLinearSvm(p.x, y, SvmConfig{}), ArgumentError);
  SvmConfig cfg;
  cfg.regularization_c = 0.0;
  EXPECT_THROW(TrainLinearSvm(p.x, p.y, cfg), ArgumentError);
}

ConceptExampleSet ExamplesFrom(const Problem& p, const std::string& name) {
  ConceptExampleSet e;
  e.concept_name = name;
  std::size_t half = p.x.rows() / 2;
  e.positives = Matrix(half, p.x.cols());
  e.negatives = Matrix(half, p.x.cols());
  for (std::size_t r = 0; r < half; ++r) {
    std::copy(p.x.row(r).begin(), p.x.row(r).end(), e.positives.row(r).begin());
    std::copy(p.x.row(half + r).begin(), p.x.row(half + r).end(),
              e.negatives.row(r).begin());
  }
  return e;
}

TEST(Cav, BankIsThreadCountIndependent) {
  std::vector<ConceptExampleSet> sets;
  for (int i = 0; i < 7; ++i) sets.push_back(ExamplesFrom(AxisSeparable(i, 20, 5), "c" + std::to_string(i)));
  const ConceptBank serial = TrainConceptBank(sets, SvmConfig{}, 1);
  const ConceptBank parallel = TrainConceptBank(sets, SvmConfig{}, 4);
  EXPECT_EQ(serial, parallel);
  EXPECT_EQ(serial.names()[6], "c6");
  EXPECT_EQ(serial[0].source, ConceptSource::kCav);
}

TEST(Cav, ErrorsNameTheConcept) {
  ConceptExampleSet few = ExamplesFrom(AxisSeparable(1, 1, 3), "tiny");
  try {
    TrainCav(few, SvmConfig{});
    FAIL();
  } catch (const InsufficientExamplesError& e) {
    EXPECT_EQ(e.concept_name(), "tiny");
  }
  ConceptExampleSet same;
  same.concept_name = "flat";
  same.positives = Matrix::FromRows({{1, 1}, {1, 1}});
  same.negatives = same.positives;
  EXPECT_THROW(TrainCav(same, SvmConfig{}), DegenerateConceptError);
}

}  // namespace
}  // namespace pcbm

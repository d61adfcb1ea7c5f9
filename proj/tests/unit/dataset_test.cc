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
#include <fstream>
#include <limits>
#include <set>

#include "pcbm/dataset.h"
#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "test_util.h"

namespace pcbm {
namespace {

using nlohmann::json;
using testing::RandomMatrix;
using testing::TempDir;

EmbeddingDataset MakeDataset(std::size_t n, std::size_t d, int k, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingDataset ds;
  ds.embeddings = RandomMatrix(rng, n, d);
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i % static_cast<std::size_t>(k));
  ds.labels = Labels::Single(ids, k);
  for (int c = 0; c < k; ++c) ds.class_names.push_back("c" + std::to_string(c));
  ds.provenance = "unit test";
  return ds;
}

// Straight byte loop, kept apart from the library's hash.
std::uint64_t ReferenceFnv(const std::vector<std::uint8_t>& bytes, std::size_t from) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = from; i < bytes.size(); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

TEST(Dataset, RoundTripSmall) {
  TempDir dir;
  EmbeddingDataset ds;
  ds.embeddings = Matrix::FromRows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}, {0.5, 0.25, -1}});
  ds.labels = Labels::Single({0, 1, 0, 1}, 2);
  ds.class_names = {"neg", "pos"};
  SaveDataset(ds, dir / "d");
  EXPECT_EQ(LoadDataset(dir / "d"), ds);
}

TEST(Dataset, RoundTripIsBitIdenticalForRandomData) {
  TempDir dir;
  for (std::uint64_t seed : {1, 2, 3}) {
    const EmbeddingDataset ds = MakeDataset(37, 6, 3, seed);
    SaveDataset(ds, dir / "d");
    const EmbeddingDataset back = LoadDataset(dir / "d");
    EXPECT_EQ(back, ds);
    const auto a = ReadFileBytes(dir / "d" / "embeddings.emb1");
    SaveDataset(back, dir / "e");
    EXPECT_EQ(ReadFileBytes(dir / "e" / "embeddings.emb1"), a);
  }
}

TEST(Dataset, MultiLabelRoundTrip) {
  TempDir dir;
  EmbeddingDataset ds;
  ds.embeddings = Matrix::FromRows({{1, 0}, {0, 1}, {1, 1}});
  ds.labels = Labels::Multi(Matrix::FromRows({{1, 0, 1}, {0, 1, 0}, {1, 1, 0}}));
  ds.class_names = {"a", "b", "c"};
  SaveDataset(ds, dir / "d");
  const EmbeddingDataset back = LoadDataset(dir / "d");
  EXPECT_EQ(back.mode(), LabelMode::kMultiLabel);
  EXPECT_EQ(back, ds);
}

TEST(Dataset, ManifestChecksumMatchesIndependentHash) {
  TempDir dir;
  const EmbeddingDataset ds = MakeDataset(100, 16, 4, 9);
  const DatasetManifest m = SaveDataset(ds, dir / "d");
  const auto bytes = ReadFileBytes(dir / "d" / "embeddings.emb1");
  EXPECT_EQ(ReferenceFnv(bytes, kEmb1HeaderSize), m.checksum);
  EXPECT_EQ(ReadDatasetManifest(dir / "d").checksum, m.checksum);
}

TEST(Dataset, DimensionMismatchIsFormatError) {
  TempDir dir;
  SaveDataset(MakeDataset(5, 4, 2, 1), dir / "d");
  json m = ReadJsonFile(dir / "d" / "manifest.json");
  m["d"] = 3;
  WriteJsonFile(dir / "d" / "manifest.json", m);
  EXPECT_THROW(LoadDataset(dir / "d"), FormatError);
}

TEST(Dataset, CorruptPayloadIsIntegrityError) {
  TempDir dir;
  SaveDataset(MakeDataset(5, 4, 2, 1), dir / "d");
  auto bytes = ReadFileBytes(dir / "d" / "embeddings.emb1");
  bytes.back() ^= 0x01;
  WriteFileBytes(dir / "d" / "embeddings.emb1", bytes);
  EXPECT_THROW(LoadDataset(dir / "d"), IntegrityError);
}

TEST(Dataset, NonFiniteValueIsValidationError) {
  TempDir dir;
  SaveDataset(MakeDataset(5, 4, 2, 1), dir / "d");
  Matrix emb = ReadEmb1(dir / "d" / "embeddings.emb1");
  emb(2, 1) = std::numeric_limits<double>::quiet_NaN();
  const Emb1Info info = WriteEmb1(dir / "d" / "embeddings.emb1", emb, Dtype::kFloat64);
  json m = ReadJsonFile(dir / "d" / "manifest.json");
  m["checksum"] = ChecksumHex(info.payload_checksum);
  WriteJsonFile(dir / "d" / "manifest.json", m);
  EXPECT_THROW(LoadDataset(dir / "d"), ValidationError);

  EmbeddingDataset bad = MakeDataset(5, 4, 2, 1);
  bad.embeddings(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(SaveDataset(bad, dir / "e"), ValidationError);
}

TEST(Dataset, UnsupportedSchemaIsFormatError) {
  TempDir dir;
  SaveDataset(MakeDataset(5, 4, 2, 1), dir / "d");
  json m = ReadJsonFile(dir / "d" / "manifest.json");
  m["schema_version"] = "pcbm.dataset/99";
  WriteJsonFile(dir / "d" / "manifest.json", m);
  EXPECT_THROW(LoadDataset(dir / "d"), FormatError);
}

TEST(Dataset, ValidateEnforcesShapeAndLabels) {
  EmbeddingDataset ds = MakeDataset(4, 2, 2, 1);
  EXPECT_NO_THROW(ds.Validate());
  ds.class_names.pop_back();
  EXPECT_THROW(ds.Validate(), ValidationError);
  EXPECT_THROW(Labels::Single({0, 2}, 2).Validate(), ValidationError);
  EXPECT_THROW(Labels::Single({0, 0}, 1).Validate(), ValidationError);
  EXPECT_THROW(Labels::Multi(Matrix::FromRows({{0.5, 1}})).Validate(), ValidationError);
}

TEST(Dataset, CsvIngestion) {
  TempDir dir;
  {
    std::ofstream out(dir / "d.csv");
    out << "label,f0,f1\ncat,1.5,2\ndog,-1,0.25\ncat,3,4\n";
  }
  const EmbeddingDataset ds = LoadDataset(dir / "d.csv");
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dim(), 2u);
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"cat", "dog"}));
  EXPECT_EQ(ds.labels.class_ids(), (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(ds.embeddings(1, 1), 0.25);
  {
    std::ofstream out(dir / "bad.csv");
    out << "label,f0,f1\ncat,1.5\ndog,1,2\n";
  }
  EXPECT_THROW(LoadDataset(dir / "bad.csv"), FormatError);
}

TEST(Split, SizesAndPartition) {
  const EmbeddingDataset ds = MakeDataset(10, 3, 2, 4);
  const DatasetSplit s = SplitDataset(ds, 0.8, 7);
  EXPECT_EQ(s.first.size(), 8u);
  EXPECT_EQ(s.second.size(), 2u);
  std::set<std::size_t> all(s.first_rows.begin(), s.first_rows.end());
  all.insert(s.second_rows.begin(), s.second_rows.end());
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(*all.rbegin(), 9u);
  EXPECT_EQ(s.first.class_names, ds.class_names);
}

TEST(Split, Deterministic) {
  const EmbeddingDataset ds = MakeDataset(50, 3, 3, 4);
  const DatasetSplit a = SplitDataset(ds, 0.8, 7);
  const DatasetSplit b = SplitDataset(ds, 0.8, 7);
  EXPECT_EQ(a.first_rows, b.first_rows);
  EXPECT_EQ(a.first, b.first);
  const DatasetSplit c = SplitDataset(ds, 0.8, 8);
  EXPECT_NE(a.first_rows, c.first_rows);
}

TEST(Split, StratifiedProportions) {
  Rng rng(11);
  EmbeddingDataset ds = MakeDataset(1000, 2, 4, 5);
  std::vector<int> ids(1000);
  for (int& v : ids) v = rng.Uniform() < 0.7 ? 0 : static_cast<int>(1 + rng.Index(3));
  ds.labels = Labels::Single(ids, 4);
  const DatasetSplit s = SplitDataset(ds, 0.8, 3);
  auto proportions = [](const EmbeddingDataset& d) {
    std::vector<double> p(4, 0.0);
    for (int v : d.labels.class_ids()) p[v] += 1.0 / static_cast<double>(d.size());
    return p;
  };
  const auto global = proportions(ds);
  const auto a = proportions(s.first);
  const auto b = proportions(s.second);
  for (int k = 0; k < 4; ++k) {
    EXPECT_LT(std::abs(a[k] - global[k]), 0.1);
    EXPECT_LT(std::abs(b[k] - global[k]), 0.1);
  }
}

TEST(Split, EmptySideIsArgumentError) {
  const EmbeddingDataset ds = MakeDataset(10, 3, 2, 4);
  EXPECT_THROW(SplitDataset(ds, 0.01, 1), ArgumentError);
  EXPECT_THROW(SplitDataset(ds, 0.99, 1), ArgumentError);
  EXPECT_THROW(SplitDataset(ds, 1.0, 1), ArgumentError);
}

void WriteLines(const std::filesystem::path& p, const std::vector<json>& records) {
  std::ofstream out(p);
  for (const json& r : records) out << r.dump() << '\n';
}

std::vector<std::size_t> Range(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v;
  for (std::size_t i = from; i < to; ++i) v.push_back(i);
  return v;
}

TEST(ConceptExamples, SelectsExactlyRequestedPairs) {
  TempDir dir;
  const EmbeddingDataset ds = MakeDataset(260, 4, 2, 1);
  WriteLines(dir / "c.jsonl",
             {{{"concept", "stripes"}, {"positives", Range(0, 60)}, {"negatives", Range(60, 260)}}});
  const auto sets = LoadConceptExamples(dir / "c.jsonl", ds, 50);
  ASSERT_EQ(sets.size(), 1u);
  EXPECT_EQ(sets[0].concept_name, "stripes");
  EXPECT_EQ(sets[0].positives.rows(), 50u);
  EXPECT_EQ(sets[0].negatives.rows(), 50u);
  for (std::size_t r : sets[0].positive_rows) EXPECT_LT(r, 60u);
  for (std::size_t r : sets[0].negative_rows) EXPECT_GE(r, 60u);
  EXPECT_EQ(sets[0].positives.row(0)[0], ds.embeddings(sets[0].positive_rows[0], 0));
}

TEST(ConceptExamples, TooFewPositivesNamesTheConcept) {
  TempDir dir;
  const EmbeddingDataset ds = MakeDataset(100, 4, 2, 1);
  WriteLines(dir / "c.jsonl", {{{"concept", "wheels"}, {"positives", Range(0, 10)}}});
  try {
    LoadConceptExamples(dir / "c.jsonl", ds, 50);
    FAIL() << "expected InsufficientExamplesError";
  } catch (const InsufficientExamplesError& e) {
    EXPECT_EQ(e.concept_name(), "wheels");
  }
}

TEST(ConceptExamples, DeterministicAndNegativesDefaultToNonPositives) {
  TempDir dir;
  const EmbeddingDataset ds = MakeDataset(120, 4, 2, 1);
  WriteLines(dir / "c.jsonl", {{{"concept", "x"}, {"positives", Range(0, 40)}}});
  const auto a = LoadConceptExamples(dir / "c.jsonl", ds, 20, 5);
  const auto b = LoadConceptExamples(dir / "c.jsonl", ds, 20, 5);
  EXPECT_EQ(a[0].positive_rows, b[0].positive_rows);
  EXPECT_EQ(a[0].negative_rows, b[0].negative_rows);
  for (std::size_t r : a[0].negative_rows) EXPECT_GE(r, 40u);
  const auto c = LoadConceptExamples(dir / "c.jsonl", ds, 20, 6);
  EXPECT_NE(a[0].positive_rows, c[0].positive_rows);
}

TEST(ConceptExamples, RejectsBadReferences) {
  TempDir dir;
  const EmbeddingDataset ds = MakeDataset(30, 4, 2, 1);
  WriteLines(dir / "a.jsonl", {{{"concept", "x"}, {"positives", {0, 1, 99}}}});
  EXPECT_THROW(LoadConceptExamples(dir / "a.jsonl", ds, 2), ValidationError);
  WriteLines(dir / "b.jsonl",
             {{{"concept", "x"}, {"positives", {0, 1, 2}}, {"negatives", {2, 3, 4}}}});
  EXPECT_THROW(LoadConceptExamples(dir / "b.jsonl", ds, 2), ValidationError);
  WriteLines(dir / "c.jsonl", {{{"name", "x"}}});
  EXPECT_THROW(LoadConceptExamples(dir / "c.jsonl", ds, 2), FormatError);
}

TEST(ConceptExamples, AnnotationFileRoundTrip) {
  TempDir dir;
  std::vector<ConceptAnnotation> a = {{"red", {1, 2, 3}, {4, 5}, true},
                                      {"blue", {6, 7}, {}, false}};
  WriteConceptAnnotations(a, dir / "a.jsonl");
  const auto back = ReadConceptAnnotations(dir / "a.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].positives, a[0].positives);
  EXPECT_EQ(back[0].negatives, a[0].negatives);
  EXPECT_TRUE(back[0].has_negatives);
  EXPECT_FALSE(back[1].has_negatives);
}

}  // namespace
}  // namespace pcbm

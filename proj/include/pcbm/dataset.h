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

#ifndef PCBM_DATASET_H_
#define PCBM_DATASET_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pcbm/matrix.h"

namespace pcbm {

enum class LabelMode { kSingleLabel, kMultiLabel };

std::string LabelModeName(LabelMode mode);
LabelMode ParseLabelMode(const std::string& name);

// Class labels for n samples: integer ids in single-label mode, an n×K 0/1
// indicator matrix in multi-label mode.
class Labels {
 public:
  Labels() = default;
  static Labels Single(std::vector<int> class_ids, int num_classes);
  static Labels Multi(Matrix indicators);

  LabelMode mode() const { return mode_; }
  int num_classes() const { return num_classes_; }
  std::size_t size() const;

  const std::vector<int>& class_ids() const { return class_ids_; }
  const Matrix& indicators() const { return indicators_; }

  // 1.0 when sample `row` belongs to class `k`.
  double Target(std::size_t row, int k) const;

  Labels Subset(std::span<const std::size_t> rows) const;

  // Single-label ids as an n×1 matrix, multi-label indicators as-is.
  Matrix ToMatrix() const;
  static Labels FromMatrix(const Matrix& m, LabelMode mode, int num_classes);

  // Throws ValidationError on out-of-range ids or non-binary indicators.
  void Validate() const;

  bool operator==(const Labels& other) const = default;

 private:
  LabelMode mode_ = LabelMode::kSingleLabel;
  int num_classes_ = 0;
  std::vector<int> class_ids_;
  Matrix indicators_;
};

struct EmbeddingDataset {
  Matrix embeddings;  // n×d backbone embeddings f(x)
  Labels labels;
  std::vector<std::string> class_names;
  std::string provenance;

  std::size_t size() const { return embeddings.rows(); }
  std::size_t dim() const { return embeddings.cols(); }
  int num_classes() const { return labels.num_classes(); }
  LabelMode mode() const { return labels.mode(); }

  // Enforces n ≥ 1, d ≥ 1, K ≥ 2, label ranges and finiteness.
  void Validate() const;
  EmbeddingDataset Subset(std::span<const std::size_t> rows) const;

  bool operator==(const EmbeddingDataset& other) const = default;
};

inline constexpr char kDatasetSchema[] = "pcbm.dataset/1";

struct DatasetManifest {
  std::string schema_version = kDatasetSchema;
  LabelMode mode = LabelMode::kSingleLabel;
  std::size_t n = 0, d = 0, k = 0;
  std::uint64_t checksum = 0;         // embeddings payload
  std::uint64_t labels_checksum = 0;  // labels payload
  std::string provenance;
  std::vector<std::string> class_names;
};

// On-disk layout: a directory holding manifest.json, embeddings.emb1 and
// labels.emb1. Values are stored as float32 when that is lossless and as
// float64 otherwise, so load(save(D)) == D bit for bit.
DatasetManifest SaveDataset(const EmbeddingDataset& dataset,
                            const std::filesystem::path& dir);

// Accepts a dataset directory or a `.csv` file (header `label,<features>`;
// labels are class names, ordered by first appearance).
EmbeddingDataset LoadDataset(const std::filesystem::path& path);
EmbeddingDataset LoadCsvDataset(const std::filesystem::path& path);
DatasetManifest ReadDatasetManifest(const std::filesystem::path& dir);

struct DatasetSplit {
  EmbeddingDataset first;
  EmbeddingDataset second;
  std::vector<std::size_t> first_rows;
  std::vector<std::size_t> second_rows;
};

// Seeded partition; `first` receives round(fraction·n) rows. Single-label
// data is stratified by class unless `stratified` is false.
DatasetSplit SplitDataset(const EmbeddingDataset& dataset, double fraction,
                          std::uint64_t seed, bool stratified = true);

struct ConceptExampleSet {
  std::string concept_name;
  Matrix positives;  // rows of P_i
  Matrix negatives;  // rows of N_i
  std::vector<std::size_t> positive_rows;  // source row ids, when known
  std::vector<std::size_t> negative_rows;
};

// One record of a concept annotation file.
struct ConceptAnnotation {
  std::string concept_name;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  bool has_negatives = false;  // false: all non-positive rows are candidates
};

std::vector<ConceptAnnotation> ReadConceptAnnotations(const std::filesystem::path& path);
void WriteConceptAnnotations(const std::vector<ConceptAnnotation>& annotations,
                             const std::filesystem::path& path);

// Validates annotations against `dataset` and selects the examples.
std::vector<ConceptExampleSet> SelectConceptExamples(
    const std::vector<ConceptAnnotation>& annotations, const EmbeddingDataset& dataset,
    std::size_t pairs_per_concept, std::uint64_t seed = 0);

// Reads a JSON-lines annotation file, one record per concept:
//   {"concept": name, "positives": [row ids], "negatives": [row ids]}
// "negatives" may be omitted, in which case random non-positive rows are
// used. Each concept gets exactly `pairs_per_concept` of each, taken from
// the front of a shuffle seeded by (seed, concept name).
std::vector<ConceptExampleSet> LoadConceptExamples(
    const std::filesystem::path& path, const EmbeddingDataset& dataset,
    std::size_t pairs_per_concept, std::uint64_t seed = 0);

}  // namespace pcbm

#endif  // PCBM_DATASET_H_

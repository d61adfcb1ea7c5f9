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

#ifndef PCBM_CONCEPT_BANK_H_
#define PCBM_CONCEPT_BANK_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcbm/dataset.h"
#include "pcbm/matrix.h"

namespace pcbm {

enum class ConceptSource { kCav, kText };

std::string ConceptSourceName(ConceptSource s);
ConceptSource ParseConceptSource(const std::string& name);

struct ConceptVector {
  std::string name;
  std::vector<double> vector;  // c_i, stored unnormalized
  double squared_norm = 0.0;
  ConceptSource source = ConceptSource::kCav;
  double margin_accuracy = 1.0;  // SVM training accuracy; 1.0 for text

  // Throws ValidationError on a zero vector or a stale squared_norm.
  void Validate() const;
  bool operator==(const ConceptVector& other) const = default;
};

// Ordered, immutable set of concept vectors (the rows of C).
class ConceptBank {
 public:
  ConceptBank() = default;
  // Validates shared dimension, unique names and each vector.
  explicit ConceptBank(std::vector<ConceptVector> concepts);

  std::size_t size() const { return concepts_.size(); }
  std::size_t dim() const { return dim_; }
  const ConceptVector& operator[](std::size_t i) const { return concepts_[i]; }
  const std::vector<ConceptVector>& concepts() const { return concepts_; }
  std::vector<std::string> names() const;
  std::optional<std::size_t> IndexOf(const std::string& name) const;

  // N_c×d matrix of the concept vectors.
  Matrix AsMatrix() const;

  bool operator==(const ConceptBank& other) const = default;

 private:
  std::vector<ConceptVector> concepts_;
  std::size_t dim_ = 0;
};

struct SvmConfig {
  double regularization_c = 0.1;
  int max_epochs = 200;
  double tolerance = 1e-6;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct SvmSolution {
  std::vector<double> weights;
  double bias = 0.0;
  double objective = 0.0;       // (1/2)||w||² + C·Σ hinge
  double train_accuracy = 0.0;
  int epochs_run = 0;
};

// Soft-margin linear SVM, labels in {-1, +1}; bias is not penalized.
// Seeded primal stochastic subgradient descent (Pegasos schedule) with
// suffix averaging over the second half of the run.
SvmSolution TrainLinearSvm(const Matrix& x, std::span<const int> y,
                           const SvmConfig& cfg);

double SvmObjective(std::span<const double> w, double b, const Matrix& x,
                    std::span<const int> y, double regularization_c);

// CAV for one concept: the SVM normal separating positives (+1) from
// negatives (-1).
ConceptVector TrainCav(const ConceptExampleSet& examples, const SvmConfig& cfg);

// Trains every concept independently; `threads` ≤ 1 runs serially. Output
// order follows `examples`, and results do not depend on `threads`.
ConceptBank TrainConceptBank(const std::vector<ConceptExampleSet>& examples,
                             const SvmConfig& cfg, int threads = 1);

using NamedVector = std::pair<std::string, std::vector<double>>;

// Vectors are stored verbatim with source = text and margin_accuracy = 1.
ConceptBank BuildBankFromText(const std::vector<NamedVector>& vectors);

// output(r, i) = <embeddings[r], c_i> / ||c_i||².
Matrix Project(const ConceptBank& bank, const Matrix& embeddings);

// Bank directory: vectors.emb1 plus bank.json (names and per-concept
// metadata, payload checksum).
void SaveConceptBank(const ConceptBank& bank, const std::filesystem::path& dir);
ConceptBank LoadConceptBank(const std::filesystem::path& dir);

// Named-vector directory as written by the embedding exporter:
// vectors.emb1 plus names.json (a JSON array of strings, one per row).
std::vector<NamedVector> LoadNamedVectors(const std::filesystem::path& dir);
void SaveNamedVectors(const std::vector<NamedVector>& vectors,
                      const std::filesystem::path& dir);

}  // namespace pcbm

#endif  // PCBM_CONCEPT_BANK_H_

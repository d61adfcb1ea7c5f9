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

// Synthetic embedding data with planted concept structure, and shift
// scenarios with a spurious concept tied to one class in training only.

#ifndef PCBM_SYNTH_H_
#define PCBM_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcbm/dataset.h"
#include "pcbm/matrix.h"

namespace pcbm {

struct SynthSpec {
  std::size_t d = 32;
  std::size_t num_concepts = 8;
  int num_classes = 5;
  std::size_t n_train = 250;
  std::size_t n_test = 250;
  double noise_sigma = 0.1;
  Matrix concept_class_probs;  // K×N_c, empty means 0.5 everywhere
  std::uint64_t seed = 0;
  // Embeddings are Gᵀ(z − latent_baseline) + noise.
  double latent_baseline = 0.0;
  // Optional per-class offsets along one extra direction orthogonal to all
  // planted directions (empty = none).
  std::vector<double> hidden_offsets;
  std::size_t pairs_per_concept = 50;

  // Resolved probabilities (fills the 0.5 default).
  Matrix Probabilities() const;
  void Validate() const;
};

nlohmann::json ToJson(const SynthSpec& spec);
SynthSpec SynthSpecFromJson(const nlohmann::json& j);

struct SynthData {
  EmbeddingDataset dataset;
  // Probe rows behind concept_examples; row labels name the concept each
  // row was drawn for.
  EmbeddingDataset probes;
  Matrix indicators;  // n×N_c ground-truth z
  std::vector<ConceptExampleSet> concept_examples;
  Matrix planted_directions;          // N_c×d, orthonormal rows
  std::vector<double> hidden_direction;  // unit, orthogonal to G; empty if unused
  std::vector<std::string> concept_names;
};

// Seeded orthonormal rows via Gram-Schmidt on a Gaussian matrix.
Matrix OrthonormalRows(std::size_t rows, std::size_t d, std::uint64_t seed);

std::vector<std::string> SynthConceptNames(std::size_t n);
std::vector<std::string> SynthClassNames(int k);

// One labelled draw of `n_train` rows. Concept examples come from a
// separate probe draw: every other concept Bernoulli(0.5), the target concept
// forced on for positives and off for negatives.
SynthData GenerateDataset(const SynthSpec& spec);

struct ShiftScenario {
  SynthSpec spec;
  EmbeddingDataset train;
  EmbeddingDataset test;
  Matrix train_indicators;
  Matrix test_indicators;
  int shifted_class = 0;
  std::size_t spurious_concept = 0;
  std::vector<ConceptExampleSet> concept_examples;
  EmbeddingDataset probes;
  Matrix planted_directions;
  std::vector<double> hidden_direction;
  std::vector<std::string> concept_names;
};

// Train rows of `shifted_class` always carry the spurious concept, test rows
// never do; all other probabilities are shared by both domains.
ShiftScenario GenerateShiftScenario(const SynthSpec& spec, int shifted_class,
                                    std::size_t spurious_concept);

// Same generator without a forced concept: train and test are two draws of
// one distribution (used for the hidden-signal scenario).
ShiftScenario GenerateTwoDomainScenario(const SynthSpec& spec);

struct ShiftSetup {
  SynthSpec spec;
  int shifted_class = 0;
  std::size_t spurious_concept = 0;
  int confuser_class = 0;  // shares the core concepts of the shifted class
};

// Default 5-class, 8-concept shift profile with roles permuted by `seed`.
ShiftSetup DefaultShiftSetup(std::uint64_t seed);

// Three classes with identical concept profiles that differ only along a
// hidden direction (offsets +1, 0, -1); the other two classes are distinct.
SynthSpec HiddenSignalSpec(std::uint64_t seed);

// Scenario directory: train/, test/ and probes/ datasets, probes.jsonl
// (concept annotations over probes/), directions.emb1 and scenario.json.
void SaveScenario(const ShiftScenario& scenario, const std::filesystem::path& dir);
ShiftScenario LoadScenario(const std::filesystem::path& dir);

}  // namespace pcbm

#endif  // PCBM_SYNTH_H_

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

// End-to-end runs over synth scenarios: concept learning, PCBM and hybrid
// training, target-domain splits, and the edit baselines of the study
// protocol. Shared by the CLI, the edit server and the acceptance suite.

#ifndef PCBM_PIPELINE_H_
#define PCBM_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcbm/concept_bank.h"
#include "pcbm/editor.h"
#include "pcbm/pcbm_model.h"
#include "pcbm/synth.h"

namespace pcbm {

struct PipelineConfig {
  SvmConfig svm;
  PCBMConfig pcbm;
  ResidualConfig residual;
  bool select_lambda = false;
  double validation_fraction = 0.2;
  double adapt_fraction = 0.5;  // share of the test domain used by oracles
  int threads = 1;
  std::uint64_t seed = 0;
};

nlohmann::json ToJson(const PipelineConfig& cfg);
PipelineConfig PipelineConfigFromJson(const nlohmann::json& j);

EditData MakeEditData(const ConceptBank& bank, const EmbeddingDataset& data);

// A scenario with everything trained. `adapt` and `heldout` partition the
// test domain; oracle strategies see `adapt`, all reports use `heldout`.
struct TrainedScenario {
  std::string name;
  int shifted_class = 0;
  std::size_t spurious_concept = 0;
  std::vector<std::string> class_names;
  ConceptBank bank;
  PCBMModel pcbm;
  HybridModel hybrid;
  EditData train;
  EditData adapt;
  EditData heldout;
  EmbeddingDataset adapt_dataset;
  EmbeddingDataset heldout_dataset;
  PipelineConfig config;
};

TrainedScenario TrainScenario(const ShiftScenario& scenario, const PipelineConfig& cfg,
                              const std::string& name = "scenario");

// Study scenario directory: bank/, model/ (PCBM), hybrid/, adapt/, heldout/
// and study.json. Everything the edit server needs, nothing more.
void SaveTrainedScenario(const TrainedScenario& t, const std::filesystem::path& dir);
TrainedScenario LoadTrainedScenario(const std::filesystem::path& dir);

// Shifted-class accuracy on the held-out rows, PCBM or hybrid head.
double HeldoutClassAccuracy(const TrainedScenario& t, const PCBMModel& pcbm);
double HeldoutHybridClassAccuracy(const TrainedScenario& t, const HybridModel& hybrid);

struct StrategyComparison {
  double unedited = 0.0;
  double prune = 0.0;
  double prune_normalize = 0.0;
  double fine_tune = 0.0;
  bool spurious_prunable = false;  // spurious weight > 0 for the shifted class
  bool spurious_in_top3 = false;
  bool greedy_picks_spurious = false;  // first greedy round, pool of 10
};

// Prune / prune+normalize of the spurious concept versus fine-tuning, on
// the PCBM (hybrid = false) or on the hybrid's concept head.
StrategyComparison CompareStrategies(const TrainedScenario& t, bool hybrid = false);

struct Baselines {
  std::size_t count = 0;  // concepts the user pruned
  double unedited = 0.0;
  double user = 0.0;
  double random = 0.0;  // mean over `random_draws` seeded draws
  double greedy = 0.0;
  double fine_tune = 0.0;
  double hybrid_unedited = 0.0;
  double hybrid_user = 0.0;
  std::vector<std::string> greedy_selection;
  int random_draws = 0;
};

// Study baselines matched to the user's selection (concept indices, all in
// the top-10 pool), shifted-class accuracy on held-out rows.
Baselines ComputeBaselines(const TrainedScenario& t, const std::vector<std::size_t>& user,
                           std::uint64_t seed, int random_draws = 20);

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;  // sample standard deviation / √n, 0 when n < 2
};
MeanStderr Summarize(const std::vector<double>& values);

}  // namespace pcbm

#endif  // PCBM_PIPELINE_H_

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

// Global edits of a trained predictor: prune, prune+normalize, random and
// greedy pruning over a candidate pool, and oracle fine-tuning.

#ifndef PCBM_EDITOR_H_
#define PCBM_EDITOR_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcbm/metrics.h"
#include "pcbm/pcbm_model.h"

namespace pcbm {

enum class EditStrategy { kPrune, kPruneNormalize, kRandom, kGreedy, kFineTune };

std::string EditStrategyName(EditStrategy s);
EditStrategy ParseEditStrategy(const std::string& name);

struct EditOp {
  int class_id = 0;
  std::vector<std::size_t> pruned_concepts;
  EditStrategy strategy = EditStrategy::kPruneNormalize;
  std::uint64_t seed = 0;

  // Checks the class id, index ranges and, for prune strategies, that the
  // set is non-empty and every weight is strictly positive.
  void Validate(const PCBMModel& model) const;
};

// Zeroes W[class_id][i] for i in `concepts`. Only strictly positive weights
// may be pruned; anything else is an ArgumentError.
PCBMModel Prune(const PCBMModel& model, int class_id,
                std::span<const std::size_t> concepts);

// Prune, then scale the remaining positive weights of the row by
// 1 + ||w_P||₁ / ||w_P̃||₁ so the row's L1 norm is unchanged. Negative
// weights are left alone. Throws NormalizationUndefinedError when no
// positive weight remains.
PCBMModel PruneNormalize(const PCBMModel& model, int class_id,
                         std::span<const std::size_t> concepts);

struct NormalizedPrune {
  PCBMModel model;
  bool fell_back = false;  // normalization undefined, plain prune applied
  std::string warning;
};

NormalizedPrune PruneNormalizeOrFallback(const PCBMModel& model, int class_id,
                                         std::span<const std::size_t> concepts);

// Indices of the `size` largest strictly positive weights of the class row,
// descending (ties by concept name). Shorter when fewer are positive.
std::vector<std::size_t> TopPositivePool(const PCBMModel& model, int class_id,
                                         std::size_t size = 10);

struct SelectionResult {
  PCBMModel model;
  std::vector<std::size_t> selected;  // in selection order
  bool fell_back = false;
};

// Uniform draw of `count` pool entries without replacement, then
// prune+normalize.
SelectionResult RandomPrune(const PCBMModel& model, int class_id, std::size_t count,
                            std::span<const std::size_t> pool, std::uint64_t seed);

enum class GreedyMetric { kClassAccuracy, kOverallAccuracy };

struct GreedyEvalSet {
  Matrix projections;
  std::vector<int> labels;
  // Residual logits W_r·x + b_r of a hybrid on the same rows, added to the
  // concept logits when scoring. Empty for a plain PCBM.
  Matrix residual_logits;
};

struct GreedyRound {
  std::vector<std::pair<std::size_t, double>> candidates;  // (concept, score)
  std::size_t chosen = 0;
  double score = 0.0;
};

struct GreedyResult {
  SelectionResult result;
  std::vector<GreedyRound> trace;
};

// Each round scores prune_normalize(original, chosen ∪ {c}) for every
// remaining candidate and commits the best; ties go to the larger original
// weight, then the smaller concept name.
GreedyResult GreedyPrune(const PCBMModel& model, int class_id, std::size_t count,
                         std::span<const std::size_t> pool, const GreedyEvalSet& eval,
                         GreedyMetric metric = GreedyMetric::kClassAccuracy);

struct FineTuneConfig {
  int epochs = 10;
  std::uint64_t seed = 0;
};

// Continues the penalized objective on target-domain data from the current
// weights with the model's own hyperparameters.
PCBMModel FineTune(const PCBMModel& model, const Matrix& projections,
                   const Labels& labels, const FineTuneConfig& cfg);

// Fine-tunes the concept head, then refits the residual against it.
HybridModel FineTuneHybrid(const HybridModel& model, const Matrix& embeddings,
                           const Matrix& projections, const Labels& labels,
                           const FineTuneConfig& cfg);

// Hybrid with its concept head replaced by an edited one; residual weights
// are kept and the fingerprint refreshed.
HybridModel WithConceptHead(const HybridModel& model, PCBMModel edited);

// Row-local difference check: true when `edited` equals `source` outside
// row `class_id` of W, bit for bit.
bool OnlyRowChanged(const PCBMModel& source, const PCBMModel& edited, int class_id);

// Labelled rows for evaluation or target-domain adaptation. Embeddings are
// needed only when a hybrid is being edited.
struct EditData {
  Matrix projections;
  Matrix embeddings;
  Labels labels;
};

struct EditRequest {
  EditOp op;
  std::size_t count = 0;  // random / greedy: concepts to prune
  std::size_t pool_size = 10;
  GreedyMetric greedy_metric = GreedyMetric::kClassAccuracy;
  FineTuneConfig fine_tune;
};

struct EditResult {
  PCBMModel edited;
  std::optional<HybridModel> edited_hybrid;
  EvalReport pre_metrics;   // accuracy on `test`
  EvalReport post_metrics;
  double edit_gain = 0.0;   // post − pre accuracy on the edited class
  std::vector<std::size_t> pruned;
  bool fell_back = false;
  std::vector<GreedyRound> greedy_trace;
};

// Runs one edit strategy on a PCBM (and the concept head of `hybrid` when
// given; then metrics are those of the hybrid). `target` is the oracle
// target-domain data used by greedy and fine-tune.
EditResult ApplyEdit(const PCBMModel& model, const HybridModel* hybrid,
                     const EditRequest& request, const EditData* target,
                     const EditData& test);

struct EditLogRecord {
  std::string strategy;
  int class_id = 0;
  std::string class_name;
  std::vector<std::string> concepts;
  double pre_metric = 0.0;
  double post_metric = 0.0;
  std::uint64_t seed = 0;
  std::string timestamp;  // UTC, ISO 8601
};

std::string UtcTimestamp();
nlohmann::json ToJson(const EditLogRecord& r);
EditLogRecord EditLogRecordFromJson(const nlohmann::json& j);
void AppendEditLog(const std::filesystem::path& path, const EditLogRecord& record);
std::vector<EditLogRecord> ReadEditLog(const std::filesystem::path& path);

}  // namespace pcbm

#endif  // PCBM_EDITOR_H_

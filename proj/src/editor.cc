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

#include "pcbm/editor.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>

#include "pcbm/errors.h"
#include "pcbm/random.h"

namespace pcbm {

using nlohmann::json;

std::string EditStrategyName(EditStrategy s) {
  switch (s) {
    case EditStrategy::kPrune: return "prune";
    case EditStrategy::kPruneNormalize: return "prune_normalize";
    case EditStrategy::kRandom: return "random";
    case EditStrategy::kGreedy: return "greedy";
    case EditStrategy::kFineTune: return "fine_tune";
  }
  return "prune";
}

EditStrategy ParseEditStrategy(const std::string& name) {
  for (auto s : {EditStrategy::kPrune, EditStrategy::kPruneNormalize,
                 EditStrategy::kRandom, EditStrategy::kGreedy, EditStrategy::kFineTune}) {
    if (EditStrategyName(s) == name) return s;
  }
  throw ArgumentError("unknown edit strategy '" + name +
                      "' (prune, prune_normalize, random, greedy, fine_tune)");
}

namespace {

void CheckClass(const PCBMModel& model, int class_id) {
  if (class_id < 0 || class_id >= model.num_classes()) {
    throw ArgumentError("class id " + std::to_string(class_id) + " out of range [0, " +
                        std::to_string(model.num_classes()) + ")");
  }
}

void CheckPrunable(const PCBMModel& model, int class_id,
                   std::span<const std::size_t> concepts) {
  CheckClass(model, class_id);
  if (concepts.empty()) throw ArgumentError("prune set is empty");
  std::set<std::size_t> seen;
  const auto row = model.weights.row(static_cast<std::size_t>(class_id));
  for (std::size_t i : concepts) {
    if (i >= model.num_concepts()) {
      throw ArgumentError("concept index " + std::to_string(i) + " out of range");
    }
    if (!seen.insert(i).second) {
      throw ArgumentError("concept '" + model.concept_names[i] + "' listed twice");
    }
    if (!(row[i] > 0.0)) {
      throw ArgumentError("concept '" + model.concept_names[i] + "' has weight " +
                          std::to_string(row[i]) + " for class '" +
                          model.class_names[static_cast<std::size_t>(class_id)] +
                          "'; only positive weights may be pruned");
    }
  }
}

}  // namespace

void EditOp::Validate(const PCBMModel& model) const {
  CheckClass(model, class_id);
  switch (strategy) {
    case EditStrategy::kPrune:
    case EditStrategy::kPruneNormalize:
      CheckPrunable(model, class_id, pruned_concepts);
      break;
    default:
      for (std::size_t i : pruned_concepts) {
        if (i >= model.num_concepts()) throw ArgumentError("concept index out of range");
      }
  }
}

PCBMModel Prune(const PCBMModel& model, int class_id,
                std::span<const std::size_t> concepts) {
  CheckPrunable(model, class_id, concepts);
  PCBMModel out = model;
  auto row = out.weights.row(static_cast<std::size_t>(class_id));
  for (std::size_t i : concepts) row[i] = 0.0;
  return out;
}

PCBMModel PruneNormalize(const PCBMModel& model, int class_id,
                         std::span<const std::size_t> concepts) {
  PCBMModel out = Prune(model, class_id, concepts);
  const auto src = model.weights.row(static_cast<std::size_t>(class_id));
  double pruned = 0.0;
  for (std::size_t i : concepts) pruned += src[i];
  auto row = out.weights.row(static_cast<std::size_t>(class_id));
  double remaining = 0.0;
  for (double v : row) {
    if (v > 0.0) remaining += v;
  }
  if (!(remaining > 0.0)) {
    throw NormalizationUndefinedError(
        "no positive weight remains for class '" +
        model.class_names[static_cast<std::size_t>(class_id)] + "' after pruning");
  }
  const double factor = 1.0 + pruned / remaining;
  for (double& v : row) {
    if (v > 0.0) v *= factor;
  }
  return out;
}

NormalizedPrune PruneNormalizeOrFallback(const PCBMModel& model, int class_id,
                                         std::span<const std::size_t> concepts) {
  NormalizedPrune r;
  try {
    r.model = PruneNormalize(model, class_id, concepts);
  } catch (const NormalizationUndefinedError& e) {
    r.model = Prune(model, class_id, concepts);
    r.fell_back = true;
    r.warning = std::string(e.what()) + "; applied plain prune";
  }
  return r;
}

std::vector<std::size_t> TopPositivePool(const PCBMModel& model, int class_id,
                                         std::size_t size) {
  CheckClass(model, class_id);
  std::vector<std::size_t> pool;
  const auto row = model.weights.row(static_cast<std::size_t>(class_id));
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (row[i] > 0.0) pool.push_back(i);
  }
  std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return model.concept_names[a] < model.concept_names[b];
  });
  if (pool.size() > size) pool.resize(size);
  return pool;
}

SelectionResult RandomPrune(const PCBMModel& model, int class_id, std::size_t count,
                            std::span<const std::size_t> pool, std::uint64_t seed) {
  if (count > pool.size()) {
    throw ArgumentError("cannot draw " + std::to_string(count) + " concepts from a pool of " +
                        std::to_string(pool.size()));
  }
  if (count == 0) throw ArgumentError("count must be >= 1");
  std::vector<std::size_t> candidates(pool.begin(), pool.end());
  Rng rng(DeriveSeed(seed, "edit/random"));
  rng.Shuffle(std::span<std::size_t>(candidates));
  candidates.resize(count);
  SelectionResult r;
  NormalizedPrune p = PruneNormalizeOrFallback(model, class_id, candidates);
  r.model = std::move(p.model);
  r.fell_back = p.fell_back;
  r.selected = std::move(candidates);
  return r;
}

namespace {

double ScoreEdit(const PCBMModel& model, int class_id, const GreedyEvalSet& eval,
                 GreedyMetric metric) {
  Prediction pred = Predict(model, eval.projections);
  std::vector<int> labels = pred.labels;
  if (eval.residual_logits.rows() > 0) {
    Matrix logits = pred.logits;
    for (std::size_t i = 0; i < logits.data().size(); ++i) {
      logits.data()[i] += eval.residual_logits.data()[i];
    }
    Matrix scores;
    ScoreLogits(logits, model.config.loss, &scores, &labels);
  }
  if (metric == GreedyMetric::kClassAccuracy) {
    return ClassAccuracy(labels, eval.labels, class_id);
  }
  return Accuracy(labels, eval.labels, model.num_classes()).overall;
}

}  // namespace

GreedyResult GreedyPrune(const PCBMModel& model, int class_id, std::size_t count,
                         std::span<const std::size_t> pool, const GreedyEvalSet& eval,
                         GreedyMetric metric) {
  if (eval.labels.empty() || eval.projections.rows() == 0) {
    throw ArgumentError("greedy prune needs a non-empty evaluation set");
  }
  if (eval.labels.size() != eval.projections.rows()) {
    throw ArgumentError("evaluation labels and projections differ in length");
  }
  if (eval.residual_logits.rows() > 0 &&
      (eval.residual_logits.rows() != eval.projections.rows() ||
       eval.residual_logits.cols() != static_cast<std::size_t>(model.num_classes()))) {
    throw ArgumentError("residual logits do not match the evaluation set");
  }
  if (count == 0 || count > pool.size()) {
    throw ArgumentError("greedy count must be in [1, pool size]");
  }
  CheckPrunable(model, class_id, pool);
  const auto row = model.weights.row(static_cast<std::size_t>(class_id));

  GreedyResult out;
  std::vector<std::size_t> remaining(pool.begin(), pool.end());
  std::vector<std::size_t> chosen;
  for (std::size_t round = 0; round < count; ++round) {
    GreedyRound gr;
    std::size_t best_pos = 0;
    double best_score = -1.0;
    for (std::size_t pos = 0; pos < remaining.size(); ++pos) {
      const std::size_t c = remaining[pos];
      std::vector<std::size_t> trial = chosen;
      trial.push_back(c);
      const double score =
          ScoreEdit(PruneNormalizeOrFallback(model, class_id, trial).model, class_id, eval,
                    metric);
      gr.candidates.emplace_back(c, score);
      bool better = score > best_score;
      if (!better && score == best_score) {
        const std::size_t b = remaining[best_pos];
        better = row[c] > row[b] ||
                 (row[c] == row[b] && model.concept_names[c] < model.concept_names[b]);
      }
      if (better) {
        best_score = score;
        best_pos = pos;
      }
    }
    gr.chosen = remaining[best_pos];
    gr.score = best_score;
    chosen.push_back(gr.chosen);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best_pos));
    out.trace.push_back(std::move(gr));
  }
  NormalizedPrune final_edit = PruneNormalizeOrFallback(model, class_id, chosen);
  out.result.model = std::move(final_edit.model);
  out.result.fell_back = final_edit.fell_back;
  out.result.selected = std::move(chosen);
  return out;
}

PCBMModel FineTune(const PCBMModel& model, const Matrix& projections,
                   const Labels& labels, const FineTuneConfig& cfg) {
  if (cfg.epochs < 1) throw ArgumentError("fine-tune epochs must be >= 1");
  if (projections.rows() == 0) throw ArgumentError("fine-tune needs target-domain rows");
  const std::int64_t steps =
      StepsForEpochs(projections.rows(), model.config.batch_size, cfg.epochs);
  return ContinueTraining(model, projections, labels, steps,
                          DeriveSeed(cfg.seed, "edit/fine_tune"));
}

HybridModel FineTuneHybrid(const HybridModel& model, const Matrix& embeddings,
                           const Matrix& projections, const Labels& labels,
                           const FineTuneConfig& cfg) {
  HybridModel h = WithConceptHead(model, FineTune(model.pcbm, projections, labels, cfg));
  return ContinueResidual(h, embeddings, projections, labels, h.residual_config.epochs,
                          DeriveSeed(cfg.seed, "edit/fine_tune_residual"));
}

HybridModel WithConceptHead(const HybridModel& model, PCBMModel edited) {
  if (edited.weights.rows() != model.pcbm.weights.rows() ||
      edited.weights.cols() != model.pcbm.weights.cols()) {
    throw ArgumentError("edited concept head has a different shape");
  }
  HybridModel out = model;
  out.pcbm = std::move(edited);
  out.pcbm_fingerprint = Fingerprint(out.pcbm);
  return out;
}

bool OnlyRowChanged(const PCBMModel& source, const PCBMModel& edited, int class_id) {
  if (source.weights.rows() != edited.weights.rows() ||
      source.weights.cols() != edited.weights.cols()) {
    return false;
  }
  for (std::size_t k = 0; k < source.weights.rows(); ++k) {
    if (static_cast<int>(k) == class_id) continue;
    const auto a = source.weights.row(k);
    const auto b = edited.weights.row(k);
    if (!std::equal(a.begin(), a.end(), b.begin())) return false;
  }
  return source.bias == edited.bias && source.concept_names == edited.concept_names &&
         source.class_names == edited.class_names && source.config == edited.config &&
         source.mode == edited.mode;
}

// ------------------------------------------------------------ ApplyEdit

namespace {

struct Evaluated {
  EvalReport report;
  double class_accuracy = 0.0;
};

Evaluated Evaluate(const PCBMModel& pcbm, const HybridModel* hybrid, const EditData& data,
                   int class_id) {
  std::vector<int> labels;
  if (hybrid != nullptr) {
    HybridModel h = WithConceptHead(*hybrid, pcbm);
    labels = PredictHybrid(h, data.embeddings, data.projections).labels;
  } else {
    labels = Predict(pcbm, data.projections).labels;
  }
  Evaluated e;
  e.report = Accuracy(labels, data.labels.class_ids(), pcbm.num_classes());
  e.class_accuracy = ClassAccuracy(labels, data.labels.class_ids(), class_id);
  return e;
}

GreedyEvalSet MakeGreedySet(const HybridModel* hybrid, const EditData& target) {
  GreedyEvalSet set;
  set.projections = target.projections;
  set.labels = target.labels.class_ids();
  if (hybrid != nullptr) {
    set.residual_logits =
        PredictHybrid(*hybrid, target.embeddings, target.projections).residual_logits;
  }
  return set;
}

}  // namespace

EditResult ApplyEdit(const PCBMModel& model, const HybridModel* hybrid,
                     const EditRequest& request, const EditData* target,
                     const EditData& test) {
  if (hybrid != nullptr && Fingerprint(hybrid->pcbm) != Fingerprint(model)) {
    throw ArgumentError("model is not the concept head of the given hybrid");
  }
  if (model.mode != LabelMode::kSingleLabel) {
    throw ArgumentError("edits are evaluated in single-label mode only");
  }
  const EditOp& op = request.op;
  op.Validate(model);
  const int k = op.class_id;

  EditResult r;
  const Evaluated pre = Evaluate(model, hybrid, test, k);
  r.pre_metrics = pre.report;

  auto need_target = [&]() -> const EditData& {
    if (target == nullptr) {
      throw ArgumentError(EditStrategyName(op.strategy) +
                          " needs target-domain data (oracle strategy)");
    }
    return *target;
  };

  switch (op.strategy) {
    case EditStrategy::kPrune:
      r.edited = Prune(model, k, op.pruned_concepts);
      r.pruned = op.pruned_concepts;
      break;
    case EditStrategy::kPruneNormalize: {
      NormalizedPrune p = PruneNormalizeOrFallback(model, k, op.pruned_concepts);
      r.edited = std::move(p.model);
      r.fell_back = p.fell_back;
      r.pruned = op.pruned_concepts;
      break;
    }
    case EditStrategy::kRandom: {
      const auto pool = TopPositivePool(model, k, request.pool_size);
      SelectionResult s = RandomPrune(model, k, request.count, pool, op.seed);
      r.edited = std::move(s.model);
      r.fell_back = s.fell_back;
      r.pruned = std::move(s.selected);
      break;
    }
    case EditStrategy::kGreedy: {
      const auto pool = TopPositivePool(model, k, request.pool_size);
      GreedyResult g = GreedyPrune(model, k, request.count, pool,
                                   MakeGreedySet(hybrid, need_target()),
                                   request.greedy_metric);
      r.edited = std::move(g.result.model);
      r.fell_back = g.result.fell_back;
      r.pruned = std::move(g.result.selected);
      r.greedy_trace = std::move(g.trace);
      break;
    }
    case EditStrategy::kFineTune: {
      const EditData& t = need_target();
      if (hybrid != nullptr) {
        HybridModel h = FineTuneHybrid(*hybrid, t.embeddings, t.projections, t.labels,
                                       request.fine_tune);
        r.edited = h.pcbm;
        r.edited_hybrid = std::move(h);
      } else {
        r.edited = FineTune(model, t.projections, t.labels, request.fine_tune);
      }
      break;
    }
  }
  if (hybrid != nullptr && !r.edited_hybrid) {
    r.edited_hybrid = WithConceptHead(*hybrid, r.edited);
  }
  Evaluated post;
  if (r.edited_hybrid) {
    const auto labels =
        PredictHybrid(*r.edited_hybrid, test.embeddings, test.projections).labels;
    post.report = Accuracy(labels, test.labels.class_ids(), model.num_classes());
    post.class_accuracy = ClassAccuracy(labels, test.labels.class_ids(), k);
  } else {
    post = Evaluate(r.edited, nullptr, test, k);
  }
  r.post_metrics = post.report;
  r.edit_gain = post.class_accuracy - pre.class_accuracy;
  return r;
}

// ------------------------------------------------------------- edit log

std::string UtcTimestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json ToJson(const EditLogRecord& r) {
  return {{"strategy", r.strategy},       {"class", r.class_id},
          {"class_name", r.class_name},   {"concepts", r.concepts},
          {"pre_metric", r.pre_metric},   {"post_metric", r.post_metric},
          {"seed", r.seed},               {"timestamp", r.timestamp}};
}

EditLogRecord EditLogRecordFromJson(const json& j) {
  EditLogRecord r;
  r.strategy = j.at("strategy").get<std::string>();
  r.class_id = j.at("class").get<int>();
  r.class_name = j.value("class_name", "");
  r.concepts = j.at("concepts").get<std::vector<std::string>>();
  r.pre_metric = j.at("pre_metric").get<double>();
  r.post_metric = j.at("post_metric").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.timestamp = j.value("timestamp", "");
  return r;
}

void AppendEditLog(const std::filesystem::path& path, const EditLogRecord& record) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw ArgumentError("cannot open edit log " + path.string());
  out << ToJson(record).dump() << '\n';
}

std::vector<EditLogRecord> ReadEditLog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("edit log " + path.string() + " not found");
  std::vector<EditLogRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(EditLogRecordFromJson(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace pcbm

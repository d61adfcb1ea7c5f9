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

#include "pcbm/pipeline.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "pcbm/metrics.h"
#include "pcbm/random.h"

namespace pcbm {

namespace fs = std::filesystem;
using nlohmann::json;

json ToJson(const PipelineConfig& c) {
  return {{"svm",
           {{"regularization_c", c.svm.regularization_c},
            {"max_epochs", c.svm.max_epochs},
            {"tolerance", c.svm.tolerance},
            {"seed", c.svm.seed}}},
          {"pcbm",
           {{"lambda", c.pcbm.lambda},
            {"alpha", c.pcbm.alpha},
            {"max_steps", c.pcbm.max_steps},
            {"learning_rate", c.pcbm.learning_rate},
            {"batch_size", c.pcbm.batch_size},
            {"seed", c.pcbm.seed},
            {"loss", LossKindName(c.pcbm.loss)}}},
          {"residual",
           {{"learning_rate", c.residual.learning_rate},
            {"l2", c.residual.l2},
            {"epochs", c.residual.epochs},
            {"batch_size", c.residual.batch_size},
            {"seed", c.residual.seed}}},
          {"select_lambda", c.select_lambda},
          {"validation_fraction", c.validation_fraction},
          {"adapt_fraction", c.adapt_fraction},
          {"threads", c.threads},
          {"seed", c.seed}};
}

PipelineConfig PipelineConfigFromJson(const json& j) {
  PipelineConfig c;
  try {
    if (j.contains("svm")) {
      const json& s = j["svm"];
      c.svm.regularization_c = s.value("regularization_c", c.svm.regularization_c);
      c.svm.max_epochs = s.value("max_epochs", c.svm.max_epochs);
      c.svm.tolerance = s.value("tolerance", c.svm.tolerance);
      c.svm.seed = s.value("seed", c.svm.seed);
    }
    if (j.contains("pcbm")) {
      const json& p = j["pcbm"];
      c.pcbm.lambda = p.value("lambda", c.pcbm.lambda);
      c.pcbm.alpha = p.value("alpha", c.pcbm.alpha);
      c.pcbm.max_steps = p.value("max_steps", c.pcbm.max_steps);
      c.pcbm.learning_rate = p.value("learning_rate", c.pcbm.learning_rate);
      c.pcbm.batch_size = p.value("batch_size", c.pcbm.batch_size);
      c.pcbm.seed = p.value("seed", c.pcbm.seed);
      if (p.contains("loss")) c.pcbm.loss = ParseLossKind(p["loss"].get<std::string>());
    }
    if (j.contains("residual")) {
      const json& r = j["residual"];
      c.residual.learning_rate = r.value("learning_rate", c.residual.learning_rate);
      c.residual.l2 = r.value("l2", c.residual.l2);
      c.residual.epochs = r.value("epochs", c.residual.epochs);
      c.residual.batch_size = r.value("batch_size", c.residual.batch_size);
      c.residual.seed = r.value("seed", c.residual.seed);
    }
    c.select_lambda = j.value("select_lambda", c.select_lambda);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.adapt_fraction = j.value("adapt_fraction", c.adapt_fraction);
    c.threads = j.value("threads", c.threads);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad pipeline config: ") + e.what());
  }
  return c;
}

EditData MakeEditData(const ConceptBank& bank, const EmbeddingDataset& data) {
  EditData e;
  e.projections = Project(bank, data.embeddings);
  e.embeddings = data.embeddings;
  e.labels = data.labels;
  return e;
}

TrainedScenario TrainScenario(const ShiftScenario& scenario, const PipelineConfig& cfg,
                              const std::string& name) {
  TrainedScenario t;
  t.name = name;
  t.config = cfg;
  t.shifted_class = scenario.shifted_class;
  t.spurious_concept = scenario.spurious_concept;
  t.class_names = scenario.train.class_names;
  t.bank = TrainConceptBank(scenario.concept_examples, cfg.svm, cfg.threads);
  t.train = MakeEditData(t.bank, scenario.train);

  PCBMConfig pc = cfg.pcbm;
  if (cfg.select_lambda) {
    pc.lambda = SelectLambda(t.train.projections, t.train.labels, pc, DefaultLambdaGrid(),
                             cfg.validation_fraction, DeriveSeed(cfg.seed, "lambda"))
                    .lambda;
  }
  t.pcbm = TrainPcbm(t.train.projections, t.train.labels, pc, t.bank.names(),
                     t.class_names);
  t.hybrid = TrainResidual(t.pcbm, t.train.embeddings, t.train.projections, t.train.labels,
                           cfg.residual);

  const DatasetSplit split =
      SplitDataset(scenario.test, cfg.adapt_fraction, DeriveSeed(cfg.seed, "adapt"));
  t.adapt_dataset = split.first;
  t.heldout_dataset = split.second;
  t.adapt = MakeEditData(t.bank, t.adapt_dataset);
  t.heldout = MakeEditData(t.bank, t.heldout_dataset);
  return t;
}

void SaveTrainedScenario(const TrainedScenario& t, const fs::path& dir) {
  fs::create_directories(dir);
  SaveConceptBank(t.bank, dir / "bank");
  SaveModel(t.pcbm, dir / "model");
  SaveModel(t.hybrid, dir / "hybrid");
  SaveDataset(t.adapt_dataset, dir / "adapt");
  SaveDataset(t.heldout_dataset, dir / "heldout");
  WriteJsonFile(dir / "study.json", {{"schema_version", "pcbm.study_scenario/1"},
                                     {"name", t.name},
                                     {"shifted_class", t.shifted_class},
                                     {"spurious_concept", t.spurious_concept},
                                     {"class_names", t.class_names},
                                     {"config", ToJson(t.config)}});
}

TrainedScenario LoadTrainedScenario(const fs::path& dir) {
  const json meta = ReadJsonFile(dir / "study.json");
  if (meta.value("schema_version", "") != "pcbm.study_scenario/1") {
    throw FormatError("unsupported study scenario schema in " + dir.string());
  }
  TrainedScenario t;
  try {
    t.name = meta.at("name").get<std::string>();
    t.shifted_class = meta.at("shifted_class").get<int>();
    t.spurious_concept = meta.at("spurious_concept").get<std::size_t>();
    t.class_names = meta.at("class_names").get<std::vector<std::string>>();
    t.config = PipelineConfigFromJson(meta.at("config"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad study.json: ") + e.what());
  }
  t.bank = LoadConceptBank(dir / "bank");
  t.pcbm = LoadPcbmModel(dir / "model");
  t.hybrid = LoadHybridModel(dir / "hybrid");
  if (Fingerprint(t.hybrid.pcbm) != Fingerprint(t.pcbm)) {
    throw IntegrityError("hybrid concept head differs from model/ in " + dir.string());
  }
  if (t.pcbm.concept_names != t.bank.names()) {
    throw FormatError("model concepts do not match the bank in " + dir.string());
  }
  if (t.shifted_class < 0 || t.shifted_class >= t.pcbm.num_classes()) {
    throw FormatError("shifted_class out of range in " + dir.string());
  }
  t.adapt_dataset = LoadDataset(dir / "adapt");
  t.heldout_dataset = LoadDataset(dir / "heldout");
  t.adapt = MakeEditData(t.bank, t.adapt_dataset);
  t.heldout = MakeEditData(t.bank, t.heldout_dataset);
  return t;
}

double HeldoutClassAccuracy(const TrainedScenario& t, const PCBMModel& pcbm) {
  return ClassAccuracy(Predict(pcbm, t.heldout.projections).labels,
                       t.heldout.labels.class_ids(), t.shifted_class);
}

double HeldoutHybridClassAccuracy(const TrainedScenario& t, const HybridModel& hybrid) {
  return ClassAccuracy(
      PredictHybrid(hybrid, t.heldout.embeddings, t.heldout.projections).labels,
      t.heldout.labels.class_ids(), t.shifted_class);
}

namespace {

GreedyEvalSet AdaptEvalSet(const TrainedScenario& t, const HybridModel* hybrid) {
  GreedyEvalSet set;
  set.projections = t.adapt.projections;
  set.labels = t.adapt.labels.class_ids();
  if (hybrid != nullptr) {
    set.residual_logits =
        PredictHybrid(*hybrid, t.adapt.embeddings, t.adapt.projections).residual_logits;
  }
  return set;
}

}  // namespace

StrategyComparison CompareStrategies(const TrainedScenario& t, bool hybrid) {
  const int s = t.shifted_class;
  const std::size_t c = t.spurious_concept;
  const PCBMModel& head = t.pcbm;
  auto score = [&](const PCBMModel& m) {
    return hybrid ? HeldoutHybridClassAccuracy(t, WithConceptHead(t.hybrid, m))
                  : HeldoutClassAccuracy(t, m);
  };
  StrategyComparison r;
  r.unedited = score(head);
  r.spurious_prunable = head.weights(static_cast<std::size_t>(s), c) > 0.0;
  const auto top3 = ExplainClass(head, s, std::min<std::size_t>(3, head.num_concepts()));
  for (const auto& w : top3) r.spurious_in_top3 |= w.index == c && w.weight > 0.0;
  if (r.spurious_prunable) {
    const std::vector<std::size_t> set = {c};
    r.prune = score(Prune(head, s, set));
    r.prune_normalize = score(PruneNormalizeOrFallback(head, s, set).model);
  } else {
    r.prune = r.prune_normalize = r.unedited;
  }
  const auto pool = TopPositivePool(head, s, 10);
  if (!pool.empty()) {
    const GreedyResult g =
        GreedyPrune(head, s, 1, pool, AdaptEvalSet(t, hybrid ? &t.hybrid : nullptr));
    r.greedy_picks_spurious = g.result.selected.front() == c;
  }
  const FineTuneConfig ft{10, DeriveSeed(t.config.seed, "fine_tune")};
  if (hybrid) {
    r.fine_tune = HeldoutHybridClassAccuracy(
        t, FineTuneHybrid(t.hybrid, t.adapt.embeddings, t.adapt.projections,
                          t.adapt.labels, ft));
  } else {
    r.fine_tune = score(FineTune(head, t.adapt.projections, t.adapt.labels, ft));
  }
  return r;
}

Baselines ComputeBaselines(const TrainedScenario& t, const std::vector<std::size_t>& user,
                           std::uint64_t seed, int random_draws) {
  const int s = t.shifted_class;
  const auto pool = TopPositivePool(t.pcbm, s, 10);
  for (std::size_t c : user) {
    if (std::find(pool.begin(), pool.end(), c) == pool.end()) {
      throw ValidationError("selected concept '" + t.pcbm.concept_names.at(c) +
                            "' is not among the shown concepts");
    }
  }
  Baselines b;
  b.count = user.size();
  b.random_draws = random_draws;
  b.unedited = HeldoutClassAccuracy(t, t.pcbm);
  b.hybrid_unedited = HeldoutHybridClassAccuracy(t, t.hybrid);
  if (user.empty()) {
    b.user = b.random = b.greedy = b.unedited;
    b.hybrid_user = b.hybrid_unedited;
  } else {
    const PCBMModel edited = PruneNormalizeOrFallback(t.pcbm, s, user).model;
    b.user = HeldoutClassAccuracy(t, edited);
    b.hybrid_user = HeldoutHybridClassAccuracy(
        t, WithConceptHead(t.hybrid,
                           PruneNormalizeOrFallback(t.hybrid.pcbm, s, user).model));
    double total = 0.0;
    for (int i = 0; i < random_draws; ++i) {
      const SelectionResult r = RandomPrune(
          t.pcbm, s, user.size(), pool, DeriveSeed(seed, "random/" + std::to_string(i)));
      total += HeldoutClassAccuracy(t, r.model);
    }
    b.random = total / random_draws;
    const GreedyResult g = GreedyPrune(t.pcbm, s, user.size(), pool, AdaptEvalSet(t, nullptr));
    b.greedy = HeldoutClassAccuracy(t, g.result.model);
    for (std::size_t c : g.result.selected) b.greedy_selection.push_back(t.pcbm.concept_names[c]);
  }
  const FineTuneConfig ft{10, DeriveSeed(t.config.seed, "fine_tune")};
  b.fine_tune = HeldoutClassAccuracy(t, FineTune(t.pcbm, t.adapt.projections,
                                                 t.adapt.labels, ft));
  return b;
}

MeanStderr Summarize(const std::vector<double>& values) {
  MeanStderr m;
  if (values.empty()) return m;
  const double n = static_cast<double>(values.size());
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return m;
}

}  // namespace pcbm

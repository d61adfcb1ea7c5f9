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

#include "pcbm/cli.h"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pcbm/concept_bank.h"
#include "pcbm/conceptnet.h"
#include "pcbm/dataset.h"
#include "pcbm/edit_server.h"
#include "pcbm/editor.h"
#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "pcbm/metrics.h"
#include "pcbm/pcbm_model.h"
#include "pcbm/pipeline.h"
#include "pcbm/random.h"
#include "pcbm/synth.h"

namespace pcbm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kVersion[] = "0.1.0";

// ---------------------------------------------------------------- output

std::string Fmt(double v, int precision = 4) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void Add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string Render() const {
    std::vector<std::size_t> width;
    for (const auto& r : rows_) {
      if (width.size() < r.size()) width.resize(r.size(), 0);
      for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    std::ostringstream os;
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      for (std::size_t i = 0; i < rows_[r].size(); ++i) {
        if (i > 0) os << "  ";
        const bool last = i + 1 == rows_[r].size();
        os << std::left << std::setw(last ? 0 : static_cast<int>(width[i])) << rows_[r][i];
      }
      os << '\n';
      if (r == 0) {
        std::size_t total = 0;
        for (std::size_t w : width) total += w + 2;
        os << std::string(total > 2 ? total - 2 : 0, '-') << '\n';
      }
    }
    return os.str();
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
  bool json = false;
  std::string log_level = "info";

  void Info(const std::string& msg) const {
    if (log_level != "quiet") err << msg << '\n';
  }
};

// Prints the human table or the JSON report, and writes report.json into
// `out_dir` when one is given.
void Emit(const Io& io, const std::string& human, const json& report,
          const fs::path& out_dir) {
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    WriteJsonFile(out_dir / "report.json", report);
  }
  if (io.json) {
    io.out << report.dump(2) << '\n';
  } else {
    io.out << human;
  }
}

std::string OptionKey(const CLI::Option* opt) { return opt->get_single_name(); }

// Every option of `sub` with its effective value (given or default).
json ResolvedOptions(const CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string key = OptionKey(opt);
    if (key == "help" || key == "config" || key == "json" || key == "log-level") continue;
    const bool flag = opt->get_expected_max() == 0;
    if (flag) {
      j[key] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& results = opt->results();
      if (opt->get_expected_max() > 1) {
        j[key] = results;
      } else {
        j[key] = results.empty() ? "" : results.back();
      }
    } else {
      j[key] = opt->get_default_str();
    }
  }
  return j;
}

void WriteRunRecord(const fs::path& dir, const CLI::App* sub, std::uint64_t seed) {
  fs::create_directories(dir);
  WriteJsonFile(dir / "run.json", {{"tool", "pcbm"},
                                   {"version", kVersion},
                                   {"command", sub->get_name()},
                                   {"seed", seed},
                                   {"options", ResolvedOptions(sub)}});
}

// Applies a JSON config object to options not given on the command line.
void ApplyJsonConfig(CLI::App* sub, const fs::path& path) {
  const json cfg = ReadJsonFile(path);
  if (!cfg.is_object()) throw CLI::ConversionError("--config", "config must be a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") {
      throw CLI::ExtrasError(sub->get_name(), {"config key '" + key + "'"});
    }
    if (opt->count() > 0) continue;  // flags override the file
    auto as_text = [](const json& v) {
      return v.is_string() ? v.get<std::string>() : v.dump();
    };
    opt->clear();
    if (value.is_array()) {
      for (const json& v : value) opt->add_result(as_text(v));
    } else if (value.is_boolean()) {
      if (!value.get<bool>()) continue;
      opt->add_result("true");
    } else {
      opt->add_result(as_text(value));
    }
    opt->run_callback();
  }
}

// ------------------------------------------------------------- helpers

int ResolveClass(const std::vector<std::string>& class_names, const std::string& spec) {
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (class_names[i] == spec) return static_cast<int>(i);
  }
  try {
    std::size_t used = 0;
    const int id = std::stoi(spec, &used);
    if (used == spec.size() && id >= 0 && id < static_cast<int>(class_names.size())) return id;
  } catch (const std::exception&) {
  }
  throw ArgumentError("unknown class '" + spec + "'");
}

std::vector<std::size_t> ResolveConcepts(const PCBMModel& model,
                                         const std::vector<std::string>& names) {
  std::vector<std::size_t> out;
  for (const std::string& n : names) {
    auto it = std::find(model.concept_names.begin(), model.concept_names.end(), n);
    if (it == model.concept_names.end()) throw ArgumentError("unknown concept '" + n + "'");
    out.push_back(static_cast<std::size_t>(it - model.concept_names.begin()));
  }
  return out;
}

void CheckBankMatches(const ConceptBank& bank, const PCBMModel& model) {
  if (bank.names() != model.concept_names) {
    throw ValidationError("concept bank does not match the model's concept names");
  }
}

void CheckClassesMatch(const EmbeddingDataset& ds, const PCBMModel& model) {
  if (ds.class_names != model.class_names) {
    throw ValidationError("dataset class names do not match the model's");
  }
}

struct LoadedModel {
  PCBMModel pcbm;
  std::optional<HybridModel> hybrid;
};

LoadedModel LoadAnyModel(const fs::path& dir) {
  LoadedModel m;
  if (IsHybridModelDir(dir)) {
    m.hybrid = LoadHybridModel(dir);
    m.pcbm = m.hybrid->pcbm;
  } else {
    m.pcbm = LoadPcbmModel(dir);
  }
  return m;
}

std::size_t NonZeroWeights(const PCBMModel& m) {
  std::size_t n = 0;
  for (double w : m.weights.data()) {
    n += w != 0.0;
  }
  return n;
}

double RowL1(const PCBMModel& m, int k) { return L1Norm(m.weights.row(static_cast<std::size_t>(k))); }

double Cosine(std::span<const double> a, std::span<const double> b) {
  return Dot(a, b) / std::sqrt(SquaredNorm(a) * SquaredNorm(b));
}

EvalReport Evaluate(const PCBMModel& pcbm, const HybridModel* hybrid, const EditData& data,
                    MetricName metric) {
  Matrix scores;
  std::vector<int> labels;
  if (hybrid != nullptr) {
    auto p = PredictHybrid(*hybrid, data.embeddings, data.projections);
    scores = std::move(p.scores);
    labels = std::move(p.labels);
  } else {
    auto p = Predict(pcbm, data.projections);
    scores = std::move(p.scores);
    labels = std::move(p.labels);
  }
  switch (metric) {
    case MetricName::kAccuracy:
      if (data.labels.mode() != LabelMode::kSingleLabel) {
        throw ArgumentError("accuracy needs single-label data; use --metric map");
      }
      return Accuracy(labels, data.labels.class_ids(), pcbm.num_classes());
    case MetricName::kAuroc:
      if (data.labels.mode() != LabelMode::kSingleLabel) {
        throw ArgumentError("auroc needs single-label data; use --metric map");
      }
      return AurocReport(scores, data.labels.class_ids());
    case MetricName::kMap:
      if (data.labels.mode() != LabelMode::kMultiLabel) {
        throw ArgumentError("map needs multi-label data");
      }
      return MeanAveragePrecision(scores, data.labels.indicators(), pcbm.class_names);
  }
  throw ArgumentError("unknown metric");
}

std::string EvalTable(const EvalReport& r, const std::vector<std::string>& class_names) {
  Table t({"class", MetricNameString(r.metric), "n"});
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    t.Add({class_names.at(k), Fmt(r.per_class[k]),
           k < r.per_class_n.size() ? std::to_string(r.per_class_n[k]) : ""});
  }
  t.Add({"overall", Fmt(r.overall), std::to_string(r.n)});
  return t.Render();
}

json ExplainJson(const PCBMModel& m, int k, std::size_t top_k) {
  json rows = json::array();
  for (const ConceptWeight& w : ExplainClass(m, k, top_k)) {
    rows.push_back({{"concept", w.concept_name}, {"weight", w.weight}});
  }
  return {{"class", m.class_names[k]}, {"top", rows}};
}

// ----------------------------------------------------------- end to end

struct DemoArtifacts {
  json report;
  std::string human;
};

DemoArtifacts RunDemo(std::uint64_t seed, const fs::path& out, const Io& io) {
  const ShiftSetup setup = DefaultShiftSetup(seed);
  io.Info("generating shift scenario (seed " + std::to_string(seed) + ")");
  const ShiftScenario scenario =
      GenerateShiftScenario(setup.spec, setup.shifted_class, setup.spurious_concept);
  PipelineConfig cfg;
  cfg.seed = seed;
  cfg.svm.seed = seed;
  cfg.pcbm.seed = seed;
  cfg.residual.seed = seed;
  io.Info("learning concepts, training PCBM and PCBM-h");
  const TrainedScenario t = TrainScenario(scenario, cfg, "demo");
  const int s = t.shifted_class;
  const std::string shifted = t.class_names[s];
  const std::string spurious = t.bank[t.spurious_concept].name;

  json concepts = json::array();
  for (std::size_t i = 0; i < t.bank.size(); ++i) {
    concepts.push_back({{"name", t.bank[i].name},
                        {"cosine_to_planted",
                         Cosine(t.bank[i].vector, scenario.planted_directions.row(i))},
                        {"margin_accuracy", t.bank[i].margin_accuracy}});
  }

  const auto heldout_overall = [&](const PCBMModel& m) {
    return Accuracy(Predict(m, t.heldout.projections).labels, t.heldout.labels.class_ids(),
                    m.num_classes())
        .overall;
  };
  const double train_acc = Accuracy(Predict(t.pcbm, t.train.projections).labels,
                                    t.train.labels.class_ids(), t.pcbm.num_classes())
                               .overall;
  const HybridPrediction hp =
      PredictHybrid(t.hybrid, t.heldout.embeddings, t.heldout.projections);
  const Prediction pp = Predict(t.pcbm, t.heldout.projections);
  const double hybrid_acc =
      Accuracy(hp.labels, t.heldout.labels.class_ids(), t.pcbm.num_classes()).overall;

  io.Info("editing the shifted class");
  const StrategyComparison cmp = CompareStrategies(t, false);
  const StrategyComparison hcmp = CompareStrategies(t, true);
  const Baselines base = ComputeBaselines(
      t, cmp.spurious_prunable ? std::vector<std::size_t>{t.spurious_concept}
                               : std::vector<std::size_t>{},
      DeriveSeed(seed, "demo/random"));
  const ConsistencyReport cons =
      ConsistencyAnalysis(pp.scores, hp.scores, t.heldout.labels.class_ids(), 10,
                          Binning::kEqualMass);

  json explain = json::array();
  for (int k = 0; k < t.pcbm.num_classes(); ++k) explain.push_back(ExplainJson(t.pcbm, k, 3));

  json report = {
      {"command", "demo"},
      {"seed", seed},
      {"config", ToJson(cfg)},
      {"scenario",
       {{"spec", ToJson(scenario.spec)},
        {"shifted_class", shifted},
        {"spurious_concept", spurious},
        {"n_train", t.train.labels.size()},
        {"n_adapt", t.adapt.labels.size()},
        {"n_heldout", t.heldout.labels.size()}}},
      {"concepts", concepts},
      {"pcbm",
       {{"train_accuracy", train_acc},
        {"heldout_accuracy", heldout_overall(t.pcbm)},
        {"nonzero_weights", NonZeroWeights(t.pcbm)},
        {"weight_count", t.pcbm.weights.rows() * t.pcbm.weights.cols()}}},
      {"hybrid", {{"heldout_accuracy", hybrid_acc}}},
      {"explain", explain},
      {"edits",
       {{"metric", "shifted_class_accuracy"},
        {"pool", "top-10 positive concepts of the shifted class"},
        {"spurious_in_top3", cmp.spurious_in_top3},
        {"greedy_picks_spurious", cmp.greedy_picks_spurious},
        {"pcbm",
         {{"unedited", cmp.unedited},
          {"prune", cmp.prune},
          {"prune_normalize", cmp.prune_normalize},
          {"random", base.random},
          {"greedy", base.greedy},
          {"fine_tune", cmp.fine_tune}}},
        {"hybrid",
         {{"unedited", hcmp.unedited},
          {"prune", hcmp.prune},
          {"prune_normalize", hcmp.prune_normalize},
          {"fine_tune", hcmp.fine_tune}}}}},
      {"consistency", ToJson(cons)}};

  if (!out.empty()) {
    SaveScenario(scenario, out / "scenario");
    SaveTrainedScenario(t, out / "trained");
  }

  std::ostringstream h;
  h << "scenario: shifted class '" << shifted << "', spurious concept '" << spurious << "'\n";
  h << "PCBM train accuracy " << Fmt(train_acc) << ", held-out " << Fmt(heldout_overall(t.pcbm))
    << "; PCBM-h held-out " << Fmt(hybrid_acc) << "\n\n";
  Table top({"class", "top-3 concepts (weight)"});
  for (int k = 0; k < t.pcbm.num_classes(); ++k) {
    std::string cell;
    for (const ConceptWeight& w : ExplainClass(t.pcbm, k, 3)) {
      if (!cell.empty()) cell += ", ";
      cell += w.concept_name + " (" + Fmt(w.weight, 3) + ")";
    }
    top.Add({t.class_names[k], cell});
  }
  h << top.Render() << '\n';
  Table edits({"strategy", "PCBM", "PCBM-h"});
  edits.Add({"unedited", Fmt(cmp.unedited), Fmt(hcmp.unedited)});
  edits.Add({"prune", Fmt(cmp.prune), Fmt(hcmp.prune)});
  edits.Add({"prune+normalize", Fmt(cmp.prune_normalize), Fmt(hcmp.prune_normalize)});
  edits.Add({"random prune", Fmt(base.random), ""});
  edits.Add({"greedy prune (oracle)", Fmt(base.greedy), ""});
  edits.Add({"fine-tune (oracle)", Fmt(cmp.fine_tune), Fmt(hcmp.fine_tune)});
  h << "shifted-class accuracy on held-out target rows\n" << edits.Render();
  h << "\nPCBM-h changed " << cons.changed_count << " predictions; fixed fraction "
    << Fmt(cons.FixedFraction(), 3) << "\n";
  return {report, h.str()};
}

}  // namespace

// ------------------------------------------------------------------ run

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv = {"pcbm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return RunCli(static_cast<int>(argv.size()), argv.data(), out, err);
}

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Post-hoc concept bottleneck models: concepts, sparse predictors, edits", "pcbm"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.option_defaults()->always_capture_default();

  Io io{out, err};
  std::string config_path;
  std::function<void()> action;

  auto add = [&](const std::string& name, const std::string& desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_flag("--json", io.json, "Machine-readable JSON on stdout");
    sub->add_option("--config", config_path, "JSON file of option values; flags override it");
    sub->add_option("--log-level", io.log_level, "quiet, info or debug")
        ->check(CLI::IsMember({"quiet", "info", "debug"}));
    return sub;
  };

  // Option storage shared by the subcommands.
  std::string dataset, concepts_file, text_vectors, bank_dir, model_dir, out_dir, target, test;
  std::string strategy = "prune_normalize", class_spec, loss = "auto", metric, binning;
  std::string greedy_metric = "class_accuracy", kind = "shift", study, host = "127.0.0.1";
  std::string endpoint = HarvestConfig{}.endpoint, cache_dir, classes_file, state_dir, edit_log;
  std::vector<std::string> concept_names, classes, relations;
  std::size_t pairs = 50, count = 0, pool_size = 10, top_k = 3;
  std::uint64_t seed = 0;
  int threads = 1, epochs = 10, bins = 10, port = 8080, random_draws = 20, limit = 1000;
  int study_count = 9;
  bool select_lambda = false, offline = false, show_weights = false;
  SvmConfig svm;
  PCBMConfig pc;
  ResidualConfig rc;
  double validation_fraction = 0.2;
  SynthSpec synth_spec;

  // learn-concepts
  CLI::App* learn = add("learn-concepts", "Learn CAVs from annotated examples, or ingest text vectors");
  learn->add_option("--dataset", dataset, "Embedding dataset (directory or .csv)");
  learn->add_option("--concepts", concepts_file, "JSON-lines concept annotations");
  learn->add_option("--text-vectors", text_vectors, "Named-vector directory (vectors.emb1 + names.json)");
  learn->add_option("--pairs", pairs, "Positive/negative examples per concept");
  learn->add_option("--C", svm.regularization_c, "SVM regularization C");
  learn->add_option("--max-epochs", svm.max_epochs, "SVM epochs");
  learn->add_option("--tolerance", svm.tolerance, "SVM early-stop tolerance");
  learn->add_option("--threads", threads, "Concepts trained in parallel");
  learn->add_option("--seed", seed, "Seed");
  learn->add_option("--out", out_dir, "Output bank directory")->required();
  learn->callback([&] {
    action = [&] {
      svm.seed = seed;
      ConceptBank bank;
      if (!text_vectors.empty()) {
        if (!concepts_file.empty()) throw ArgumentError("give --concepts or --text-vectors, not both");
        bank = BuildBankFromText(LoadNamedVectors(text_vectors));
      } else {
        if (dataset.empty() || concepts_file.empty()) {
          throw ArgumentError("--dataset and --concepts are required without --text-vectors");
        }
        const EmbeddingDataset ds = LoadDataset(dataset);
        bank = TrainConceptBank(LoadConceptExamples(concepts_file, ds, pairs, seed), svm, threads);
      }
      SaveConceptBank(bank, out_dir);
      WriteRunRecord(out_dir, learn, seed);
      json rows = json::array();
      Table t({"concept", "source", "train acc", "||c||"});
      for (const ConceptVector& c : bank.concepts()) {
        rows.push_back({{"name", c.name},
                        {"source", ConceptSourceName(c.source)},
                        {"margin_accuracy", c.margin_accuracy},
                        {"norm", std::sqrt(c.squared_norm)}});
        t.Add({c.name, ConceptSourceName(c.source), Fmt(c.margin_accuracy, 3),
               Fmt(std::sqrt(c.squared_norm), 3)});
      }
      Emit(io, t.Render(),
           {{"command", "learn-concepts"},
            {"seed", seed},
            {"num_concepts", bank.size()},
            {"dim", bank.dim()},
            {"concepts", rows}},
           out_dir);
    };
  });

  // harvest
  CLI::App* harvest = add("harvest", "Harvest concept names from ConceptNet");
  harvest->add_option("--classes", classes, "Class names")->delimiter(',');
  harvest->add_option("--classes-file", classes_file, "File with one class name per line");
  harvest->add_option("--relations", relations, "Relations (default: all five)")->delimiter(',');
  harvest->add_option("--endpoint", endpoint, "ConceptNet API base URL");
  harvest->add_option("--cache-dir", cache_dir, "Response cache (default $PCBM_CACHE_DIR)");
  harvest->add_flag("--offline", offline, "Answer from the cache only");
  harvest->add_option("--limit", limit, "Edges requested per query");
  harvest->add_option("--out", out_dir, "Output directory (names.json, report.json)");
  harvest->callback([&] {
    action = [&] {
      std::vector<std::string> names = classes;
      if (!classes_file.empty()) {
        std::ifstream in(classes_file);
        if (!in) throw NotFoundError("cannot read " + classes_file);
        for (std::string line; std::getline(in, line);) {
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (!line.empty()) names.push_back(line);
        }
      }
      std::vector<Relation> rels;
      for (const auto& r : relations) rels.push_back(ParseRelation(r));
      if (rels.empty()) rels = AllRelations();
      HarvestConfig hc;
      hc.endpoint = endpoint;
      hc.cache_dir = cache_dir;
      hc.offline = offline;
      hc.limit = limit;
      const auto result = HarvestConceptNet(names, rels, hc);
      json map = json::object();
      Table t({"class", "concepts", "examples"});
      for (const auto& [cls, list] : result) {
        map[cls] = list;
        std::string ex;
        for (std::size_t i = 0; i < std::min<std::size_t>(5, list.size()); ++i) {
          ex += (i ? ", " : "") + list[i];
        }
        t.Add({cls, std::to_string(list.size()), ex});
      }
      json rel_names = json::array();
      for (Relation r : rels) rel_names.push_back(RelationName(r));
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        WriteJsonFile(fs::path(out_dir) / "names.json", map);
        WriteRunRecord(out_dir, harvest, 0);
      }
      Emit(io, t.Render(),
           {{"command", "harvest"}, {"relations", rel_names}, {"classes", map}}, out_dir);
    };
  });

  // train
  CLI::App* train = add("train", "Train the sparse concept-bottleneck predictor");
  train->add_option("--dataset", dataset, "Training embeddings")->required();
  train->add_option("--bank", bank_dir, "Concept bank directory")->required();
  train->add_option("--lambda", pc.lambda, "Regularization strength (scaled by 1/(N_c·K))");
  train->add_option("--alpha", pc.alpha, "Elastic-net L1 share");
  train->add_option("--max-steps", pc.max_steps, "Optimizer steps");
  train->add_option("--lr", pc.learning_rate, "Initial step size");
  train->add_option("--batch-size", pc.batch_size, "Mini-batch size");
  train->add_option("--loss", loss, "auto, cross_entropy or binary_cross_entropy");
  train->add_flag("--select-lambda", select_lambda, "Pick lambda on a validation split");
  train->add_option("--validation-fraction", validation_fraction, "Share held out for --select-lambda");
  train->add_option("--seed", seed, "Seed");
  train->add_option("--out", out_dir, "Output model directory")->required();
  train->callback([&] {
    action = [&] {
      const EmbeddingDataset ds = LoadDataset(dataset);
      const ConceptBank bank = LoadConceptBank(bank_dir);
      const Matrix proj = Project(bank, ds.embeddings);
      pc.seed = seed;
      if (loss == "auto") {
        pc.loss = ds.mode() == LabelMode::kMultiLabel ? LossKind::kPerClassBinaryCrossEntropy
                                                      : LossKind::kCrossEntropy;
      } else {
        pc.loss = ParseLossKind(loss);
      }
      json selection = nullptr;
      if (select_lambda) {
        const LambdaSelection sel = SelectLambda(proj, ds.labels, pc, DefaultLambdaGrid(),
                                                 validation_fraction, DeriveSeed(seed, "lambda"));
        pc.lambda = sel.lambda;
        selection = {{"grid", sel.grid}, {"validation_score", sel.validation_accuracy},
                     {"lambda", sel.lambda}};
      }
      TrainingTrace trace;
      const PCBMModel m = TrainPcbm(proj, ds.labels, pc, bank.names(), ds.class_names, &trace);
      SaveModel(m, out_dir);
      WriteRunRecord(out_dir, train, seed);
      const MetricName mn =
          ds.mode() == LabelMode::kMultiLabel ? MetricName::kMap : MetricName::kAccuracy;
      const EvalReport r = Evaluate(m, nullptr, {proj, ds.embeddings, ds.labels}, mn);
      Table t({"lambda", "train " + MetricNameString(mn), "objective", "nonzero", "steps"});
      t.Add({Fmt(pc.lambda, 4), Fmt(r.overall), Fmt(trace.epoch_objectives.back(), 5),
             std::to_string(NonZeroWeights(m)) + "/" + std::to_string(m.weights.rows() * m.weights.cols()),
             std::to_string(trace.steps)});
      Emit(io, t.Render(),
           {{"command", "train"},
            {"seed", seed},
            {"lambda", pc.lambda},
            {"penalty_coefficient", PenaltyCoefficient(pc, m.num_concepts(), m.num_classes())},
            {"lambda_selection", selection},
            {"train_metric", ToJson(r)},
            {"final_objective", trace.epoch_objectives.back()},
            {"epoch_objectives", trace.epoch_objectives},
            {"steps", trace.steps},
            {"nonzero_weights", NonZeroWeights(m)}},
           out_dir);
    };
  });

  // train-hybrid
  CLI::App* hybrid = add("train-hybrid", "Fit the residual head with the bottleneck frozen");
  hybrid->add_option("--model", model_dir, "Trained PCBM directory")->required();
  hybrid->add_option("--dataset", dataset, "Training embeddings")->required();
  hybrid->add_option("--bank", bank_dir, "Concept bank directory")->required();
  hybrid->add_option("--lr", rc.learning_rate, "Adam learning rate");
  hybrid->add_option("--l2", rc.l2, "L2 coefficient on residual weights");
  hybrid->add_option("--epochs", rc.epochs, "Epochs");
  hybrid->add_option("--batch-size", rc.batch_size, "Mini-batch size");
  hybrid->add_option("--seed", seed, "Seed");
  hybrid->add_option("--out", out_dir, "Output hybrid model directory")->required();
  hybrid->callback([&] {
    action = [&] {
      const PCBMModel m = LoadPcbmModel(model_dir);
      const ConceptBank bank = LoadConceptBank(bank_dir);
      CheckBankMatches(bank, m);
      const EmbeddingDataset ds = LoadDataset(dataset);
      CheckClassesMatch(ds, m);
      const Matrix proj = Project(bank, ds.embeddings);
      rc.seed = seed;
      ResidualTrace trace;
      const HybridModel h = TrainResidual(m, ds.embeddings, proj, ds.labels, rc, &trace);
      SaveModel(h, out_dir);
      WriteRunRecord(out_dir, hybrid, seed);
      Table t({"PCBM loss", "PCBM-h loss", "concept head fingerprint"});
      t.Add({Fmt(trace.pcbm_loss, 5), Fmt(trace.hybrid_loss, 5), ChecksumHex(h.pcbm_fingerprint)});
      Emit(io, t.Render(),
           {{"command", "train-hybrid"},
            {"seed", seed},
            {"pcbm_loss", trace.pcbm_loss},
            {"hybrid_loss", trace.hybrid_loss},
            {"pcbm_fingerprint", ChecksumHex(h.pcbm_fingerprint)}},
           out_dir);
    };
  });

  // edit
  CLI::App* edit = add("edit", "Apply a global edit to one class");
  edit->add_option("--model", model_dir, "PCBM or PCBM-h directory")->required();
  edit->add_option("--bank", bank_dir, "Concept bank directory")->required();
  edit->add_option("--class", class_spec, "Class to edit (name or index)")->required();
  edit->add_option("--strategy", strategy, "prune, prune_normalize, random, greedy or fine_tune");
  edit->add_option("--concepts", concept_names, "Concepts to prune")->delimiter(',');
  edit->add_option("--count", count, "Concepts to prune (random, greedy)");
  edit->add_option("--pool-size", pool_size, "Candidate pool for random and greedy");
  edit->add_option("--greedy-metric", greedy_metric, "class_accuracy or overall_accuracy");
  edit->add_option("--epochs", epochs, "Fine-tune epochs");
  edit->add_option("--target", target, "Target-domain data for greedy and fine_tune");
  edit->add_option("--test", test, "Evaluation data")->required();
  edit->add_option("--seed", seed, "Seed");
  edit->add_option("--edit-log", edit_log, "Edit log (default <out>/edit_log.jsonl)");
  edit->add_option("--out", out_dir, "Output directory")->required();
  edit->callback([&] {
    action = [&] {
      const LoadedModel lm = LoadAnyModel(model_dir);
      const ConceptBank bank = LoadConceptBank(bank_dir);
      CheckBankMatches(bank, lm.pcbm);
      const EmbeddingDataset test_ds = LoadDataset(test);
      CheckClassesMatch(test_ds, lm.pcbm);
      const EditData test_data = MakeEditData(bank, test_ds);
      std::optional<EditData> target_data;
      if (!target.empty()) {
        const EmbeddingDataset t = LoadDataset(target);
        CheckClassesMatch(t, lm.pcbm);
        target_data = MakeEditData(bank, t);
      }
      EditRequest req;
      req.op.class_id = ResolveClass(lm.pcbm.class_names, class_spec);
      req.op.strategy = ParseEditStrategy(strategy);
      req.op.pruned_concepts = ResolveConcepts(lm.pcbm, concept_names);
      req.op.seed = seed;
      req.count = count;
      req.pool_size = pool_size;
      if (greedy_metric == "class_accuracy") {
        req.greedy_metric = GreedyMetric::kClassAccuracy;
      } else if (greedy_metric == "overall_accuracy") {
        req.greedy_metric = GreedyMetric::kOverallAccuracy;
      } else {
        throw ArgumentError("unknown greedy metric '" + greedy_metric + "'");
      }
      req.fine_tune = {epochs, DeriveSeed(seed, "fine_tune")};
      const EditResult r = ApplyEdit(lm.pcbm, lm.hybrid ? &*lm.hybrid : nullptr, req,
                                     target_data ? &*target_data : nullptr, test_data);
      const int k = req.op.class_id;
      const fs::path out = out_dir;
      if (r.edited_hybrid) {
        SaveModel(*r.edited_hybrid, out / "model");
      } else {
        SaveModel(r.edited, out / "model");
      }
      WriteRunRecord(out, edit, seed);
      std::vector<std::string> pruned;
      for (std::size_t c : r.pruned) pruned.push_back(lm.pcbm.concept_names[c]);
      const double pre_class = r.pre_metrics.per_class.at(k);
      const double post_class = r.post_metrics.per_class.at(k);
      EditLogRecord rec{EditStrategyName(req.op.strategy), k, lm.pcbm.class_names[k], pruned,
                        pre_class, post_class, seed, UtcTimestamp()};
      AppendEditLog(edit_log.empty() ? out / "edit_log.jsonl" : fs::path(edit_log), rec);
      json trace = json::array();
      for (const GreedyRound& g : r.greedy_trace) {
        json cand = json::array();
        for (const auto& [c, score] : g.candidates) {
          cand.push_back({{"concept", lm.pcbm.concept_names[c]}, {"score", score}});
        }
        trace.push_back({{"chosen", lm.pcbm.concept_names[g.chosen]},
                         {"score", g.score},
                         {"candidates", cand}});
      }
      Table t({"", "before", "after"});
      t.Add({"overall accuracy", Fmt(r.pre_metrics.overall), Fmt(r.post_metrics.overall)});
      t.Add({"'" + lm.pcbm.class_names[k] + "' accuracy", Fmt(pre_class), Fmt(post_class)});
      t.Add({"row L1 norm", Fmt(RowL1(lm.pcbm, k), 6), Fmt(RowL1(r.edited, k), 6)});
      std::string human = t.Render();
      human += "pruned: " + (pruned.empty() ? std::string("(none)") : "");
      for (std::size_t i = 0; i < pruned.size(); ++i) human += (i ? ", " : "") + pruned[i];
      human += "\n";
      if (r.fell_back) human += "warning: no positive weight left, plain prune applied\n";
      Emit(io, human,
           {{"command", "edit"},
            {"seed", seed},
            {"strategy", EditStrategyName(req.op.strategy)},
            {"model_kind", lm.hybrid ? "hybrid" : "pcbm"},
            {"class", lm.pcbm.class_names[k]},
            {"pruned", pruned},
            {"fell_back", r.fell_back},
            {"pre_metrics", ToJson(r.pre_metrics)},
            {"post_metrics", ToJson(r.post_metrics)},
            {"pre_class_accuracy", pre_class},
            {"post_class_accuracy", post_class},
            {"edit_gain", r.edit_gain},
            {"row_l1_before", RowL1(lm.pcbm, k)},
            {"row_l1_after", RowL1(r.edited, k)},
            {"greedy_trace", trace}},
           out);
    };
  });

  // eval
  CLI::App* eval = add("eval", "Evaluate a model");
  eval->add_option("--model", model_dir, "PCBM or PCBM-h directory")->required();
  eval->add_option("--bank", bank_dir, "Concept bank directory")->required();
  eval->add_option("--dataset", dataset, "Evaluation data")->required();
  eval->add_option("--metric", metric, "accuracy, auroc or map (default by label mode)");
  eval->add_option("--out", out_dir, "Directory for report.json");
  eval->callback([&] {
    action = [&] {
      const LoadedModel lm = LoadAnyModel(model_dir);
      const ConceptBank bank = LoadConceptBank(bank_dir);
      CheckBankMatches(bank, lm.pcbm);
      const EmbeddingDataset ds = LoadDataset(dataset);
      CheckClassesMatch(ds, lm.pcbm);
      const MetricName mn = !metric.empty() ? ParseMetricName(metric)
                            : ds.mode() == LabelMode::kMultiLabel ? MetricName::kMap
                                                                  : MetricName::kAccuracy;
      const EvalReport r =
          Evaluate(lm.pcbm, lm.hybrid ? &*lm.hybrid : nullptr, MakeEditData(bank, ds), mn);
      json report = ToJson(r);
      report["command"] = "eval";
      report["model_kind"] = lm.hybrid ? "hybrid" : "pcbm";
      Emit(io, EvalTable(r, lm.pcbm.class_names), report, out_dir);
    };
  });

  // explain
  CLI::App* explain = add("explain", "Largest concept weights per class");
  explain->add_option("--model", model_dir, "PCBM or PCBM-h directory")->required();
  explain->add_option("--top-k", top_k, "Concepts per class");
  explain->add_option("--class", class_spec, "Only this class (name or index)");
  explain->add_option("--out", out_dir, "Directory for report.json");
  explain->callback([&] {
    action = [&] {
      const LoadedModel lm = LoadAnyModel(model_dir);
      std::vector<int> ks;
      if (!class_spec.empty()) {
        ks.push_back(ResolveClass(lm.pcbm.class_names, class_spec));
      } else {
        for (int k = 0; k < lm.pcbm.num_classes(); ++k) ks.push_back(k);
      }
      json rows = json::array();
      Table t({"class", "rank", "concept", "weight"});
      for (int k : ks) {
        rows.push_back(ExplainJson(lm.pcbm, k, top_k));
        int rank = 1;
        for (const ConceptWeight& w : ExplainClass(lm.pcbm, k, top_k)) {
          t.Add({lm.pcbm.class_names[k], std::to_string(rank++), w.concept_name, Fmt(w.weight)});
        }
      }
      Emit(io, t.Render(), {{"command", "explain"}, {"top_k", top_k}, {"classes", rows}},
           out_dir);
    };
  });

  // consistency
  CLI::App* consistency = add("consistency", "Where the residual head overrides the bottleneck");
  consistency->add_option("--model", model_dir, "PCBM-h directory")->required();
  consistency->add_option("--bank", bank_dir, "Concept bank directory")->required();
  consistency->add_option("--dataset", dataset, "Evaluation data")->required();
  consistency->add_option("--bins", bins, "Confidence bins");
  consistency->add_option("--binning", binning, "equal_width (default) or equal_mass");
  consistency->add_option("--out", out_dir, "Directory for report.json");
  consistency->callback([&] {
    action = [&] {
      const HybridModel h = LoadHybridModel(model_dir);
      const ConceptBank bank = LoadConceptBank(bank_dir);
      CheckBankMatches(bank, h.pcbm);
      const EmbeddingDataset ds = LoadDataset(dataset);
      CheckClassesMatch(ds, h.pcbm);
      if (ds.mode() != LabelMode::kSingleLabel) {
        throw ArgumentError("consistency analysis needs single-label data");
      }
      Binning b = Binning::kEqualWidth;
      if (binning == "equal_mass") {
        b = Binning::kEqualMass;
      } else if (!binning.empty() && binning != "equal_width") {
        throw ArgumentError("unknown binning '" + binning + "'");
      }
      const EditData d = MakeEditData(bank, ds);
      const Prediction p = Predict(h.pcbm, d.projections);
      const HybridPrediction hp = PredictHybrid(h, d.embeddings, d.projections);
      const ConsistencyReport r =
          ConsistencyAnalysis(p.scores, hp.scores, ds.labels.class_ids(), bins, b);
      Table t({"confidence", "n", "PCBM acc", "agreement", "|Δconf|"});
      for (const ConsistencyBin& bin : r.bins) {
        t.Add({Fmt(bin.lower, 3) + "-" + Fmt(bin.upper, 3), std::to_string(bin.n),
               bin.n ? Fmt(bin.pcbm_accuracy, 3) : "n/a",
               bin.n ? Fmt(bin.consistency_rate, 3) : "n/a",
               bin.n ? Fmt(bin.confidence_mad, 3) : "n/a"});
      }
      std::string human = t.Render();
      human += "changed " + std::to_string(r.changed_count) + ", fixed " +
               std::to_string(r.fixed_count) + " (fraction " + Fmt(r.FixedFraction(), 3) + ")\n";
      json report = ToJson(r);
      report["command"] = "consistency";
      Emit(io, human, report, out_dir);
    };
  });

  // synth
  CLI::App* synth = add("synth", "Generate a synthetic scenario");
  synth->add_option("--kind", kind, "shift, hidden or plain")
      ->check(CLI::IsMember({"shift", "hidden", "plain"}));
  synth->add_option("--seed", seed, "Seed");
  CLI::Option* o_noise = synth->add_option("--noise", synth_spec.noise_sigma, "Noise sigma");
  CLI::Option* o_ntrain = synth->add_option("--n-train", synth_spec.n_train, "Training rows");
  CLI::Option* o_ntest = synth->add_option("--n-test", synth_spec.n_test, "Test rows");
  CLI::Option* o_pairs = synth->add_option("--pairs", synth_spec.pairs_per_concept, "Examples per concept");
  synth->add_option("--d", synth_spec.d, "Embedding dimension (plain)");
  synth->add_option("--num-concepts", synth_spec.num_concepts, "Planted concepts (plain)");
  synth->add_option("--num-classes", synth_spec.num_classes, "Classes (plain)");
  synth->add_option("--out", out_dir, "Output scenario directory")->required();
  synth->callback([&] {
    action = [&] {
      ShiftScenario sc;
      SynthSpec spec = synth_spec;
      auto override_from = [&](SynthSpec base) {
        if (o_noise->count()) base.noise_sigma = synth_spec.noise_sigma;
        if (o_ntrain->count()) base.n_train = synth_spec.n_train;
        if (o_ntest->count()) base.n_test = synth_spec.n_test;
        if (o_pairs->count()) base.pairs_per_concept = synth_spec.pairs_per_concept;
        return base;
      };
      if (kind == "shift") {
        ShiftSetup setup = DefaultShiftSetup(seed);
        spec = override_from(setup.spec);
        sc = GenerateShiftScenario(spec, setup.shifted_class, setup.spurious_concept);
      } else if (kind == "hidden") {
        spec = override_from(HiddenSignalSpec(seed));
        sc = GenerateTwoDomainScenario(spec);
      } else {
        spec.seed = seed;
        sc = GenerateTwoDomainScenario(spec);
      }
      SaveScenario(sc, out_dir);
      WriteRunRecord(out_dir, synth, seed);
      Table t({"kind", "train", "test", "d", "concepts", "classes", "shifted", "spurious"});
      const bool shift = kind == "shift";
      t.Add({kind, std::to_string(sc.train.size()), std::to_string(sc.test.size()),
             std::to_string(sc.train.dim()), std::to_string(sc.concept_names.size()),
             std::to_string(sc.train.num_classes()),
             shift ? sc.train.class_names[sc.shifted_class] : "-",
             shift ? sc.concept_names[sc.spurious_concept] : "-"});
      json report = {{"command", "synth"}, {"kind", kind}, {"seed", seed}, {"spec", ToJson(spec)}};
      if (shift) {
        report["shifted_class"] = sc.train.class_names[sc.shifted_class];
        report["spurious_concept"] = sc.concept_names[sc.spurious_concept];
      }
      Emit(io, t.Render(), report, out_dir);
    };
  });

  // prepare-study
  CLI::App* prepare = add("prepare-study", "Generate and train the scenarios of an editing study");
  prepare->add_option("--count", study_count, "Scenarios")->check(CLI::PositiveNumber);
  prepare->add_option("--seed", seed, "First scenario seed; scenario i uses seed + i");
  prepare->add_option("--threads", threads, "Concepts trained in parallel");
  prepare->add_option("--out", out_dir, "Study directory")->required();
  prepare->callback([&] {
    action = [&] {
      json rows = json::array();
      Table t({"scenario", "seed", "shifted class", "spurious concept", "shown"});
      const auto trained = PrepareStudy(out_dir, study_count, seed, threads,
                                        [&](const std::string& name) { io.Info("training " + name); });
      for (std::size_t i = 0; i < trained.size(); ++i) {
        const TrainedScenario& tr = trained[i];
        const std::uint64_t s = seed + i;
        const auto pool = TopPositivePool(tr.pcbm, tr.shifted_class, 10);
        rows.push_back({{"scenario", tr.name},
                        {"seed", s},
                        {"shifted_class", tr.class_names[tr.shifted_class]},
                        {"spurious_concept", tr.bank[tr.spurious_concept].name},
                        {"shown", pool.size()}});
        t.Add({tr.name, std::to_string(s), tr.class_names[tr.shifted_class],
               tr.bank[tr.spurious_concept].name, std::to_string(pool.size())});
      }
      WriteRunRecord(out_dir, prepare, seed);
      Emit(io, t.Render(), {{"command", "prepare-study"}, {"seed", seed}, {"scenarios", rows}},
           out_dir);
    };
  });

  // serve
  CLI::App* serve = add("serve", "Run the editing-study HTTP service");
  serve->add_option("--study", study, "Study directory from prepare-study")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--state-dir", state_dir, "Session logs (default <study>/sessions)");
  serve->add_flag("--show-weights", show_weights, "Include concept weights in tasks");
  serve->add_option("--seed", seed, "Seed of the random-prune baseline");
  serve->add_option("--random-draws", random_draws, "Draws averaged by the random baseline");
  serve->callback([&] {
    action = [&] {
      ServerConfig sc;
      sc.study_dir = study;
      sc.state_dir = state_dir;
      sc.show_weights = show_weights;
      sc.seed = seed;
      sc.random_draws = random_draws;
      EditServer server(sc);
      io.Info("serving " + std::to_string(server.scenarios().size()) + " scenarios on http://" +
              host + ":" + std::to_string(port));
      RunEditServer(server, host, port);
    };
  });

  // demo
  CLI::App* demo = add("demo", "Synthetic scenario end to end: concepts, PCBM, PCBM-h, edits");
  demo->add_option("--seed", seed, "Seed");
  demo->add_option("--out", out_dir, "Artifact directory (optional)");
  demo->callback([&] {
    action = [&] {
      const DemoArtifacts a = RunDemo(seed, out_dir, io);
      if (!out_dir.empty()) WriteRunRecord(out_dir, demo, seed);
      Emit(io, a.human, a.report, out_dir);
    };
  });

  try {
    app.parse(argc, argv);
    for (CLI::App* sub : app.get_subcommands()) {
      if (!config_path.empty()) ApplyJsonConfig(sub, config_path);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    err << json{{"code", e.code()}, {"message", e.what()}}.dump() << '\n';
    return 2;
  }
  if (!action) return 2;
  try {
    action();
  } catch (const Error& e) {
    err << json{{"code", e.code()}, {"message", e.what()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << json{{"code", "internal_error"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace pcbm

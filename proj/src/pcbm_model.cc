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

#include "pcbm/pcbm_model.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "pcbm/metrics.h"
#include "pcbm/random.h"

namespace pcbm {

namespace fs = std::filesystem;
using nlohmann::json;

std::string LossKindName(LossKind loss) {
  return loss == LossKind::kCrossEntropy ? "cross_entropy"
                                         : "per_class_binary_cross_entropy";
}

LossKind ParseLossKind(const std::string& name) {
  if (name == "cross_entropy") return LossKind::kCrossEntropy;
  if (name == "per_class_binary_cross_entropy") {
    return LossKind::kPerClassBinaryCrossEntropy;
  }
  throw FormatError("unknown loss '" + name + "'");
}

void PCBMConfig::Validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ArgumentError("lambda must be finite and >= 0");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must be in [0, 1]");
  if (max_steps < 1) throw ArgumentError("max_steps must be >= 1");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
}

double PenaltyCoefficient(const PCBMConfig& cfg, std::size_t num_concepts,
                          int num_classes) {
  return cfg.lambda / (static_cast<double>(num_concepts) * num_classes);
}

void PCBMModel::Validate() const {
  const auto k = static_cast<std::size_t>(num_classes());
  if (k < 2) throw ValidationError("model needs at least 2 classes");
  if (bias.size() != k) throw ValidationError("bias length != K");
  if (concept_names.size() != weights.cols()) {
    throw ValidationError("concept_names length != N_c");
  }
  if (class_names.size() != k) throw ValidationError("class_names length != K");
  if (!weights.AllFinite()) throw ValidationError("non-finite model weight");
  for (double v : bias) {
    if (!std::isfinite(v)) throw ValidationError("non-finite model bias");
  }
}

std::uint64_t Fingerprint(const PCBMModel& model) {
  std::vector<std::uint8_t> bytes;
  auto put_doubles = [&bytes](std::span<const double> v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size() * sizeof(double));
  };
  auto put_string = [&bytes](const std::string& s) {
    bytes.insert(bytes.end(), s.begin(), s.end());
    bytes.push_back(0);
  };
  put_doubles(model.weights.data());
  put_doubles(model.bias);
  for (const auto& s : model.concept_names) put_string(s);
  for (const auto& s : model.class_names) put_string(s);
  return Fnv1a64(bytes);
}

void ResidualConfig::Validate() const {
  if (!(learning_rate > 0.0)) throw ArgumentError("residual learning_rate must be > 0");
  if (!(l2 >= 0.0)) throw ArgumentError("residual l2 must be >= 0");
  if (epochs < 1) throw ArgumentError("residual epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("residual batch_size must be >= 1");
}

// ------------------------------------------------------------ internals

namespace {

void CheckShapes(const Matrix& projections, const Labels& labels,
                 std::size_t num_concepts, int num_classes) {
  if (projections.cols() != num_concepts) {
    throw ArgumentError("projection width " + std::to_string(projections.cols()) +
                        " != N_c " + std::to_string(num_concepts));
  }
  if (labels.size() != projections.rows()) {
    throw ArgumentError("label count != projection rows");
  }
  if (labels.num_classes() != num_classes) {
    throw ArgumentError("label space has " + std::to_string(labels.num_classes()) +
                        " classes, model has " + std::to_string(num_classes));
  }
}

// Row logits z = W·p + b written into `z`.
void RowLogits(const Matrix& w, std::span<const double> b,
               std::span<const double> p, std::span<double> z) {
  for (std::size_t k = 0; k < w.rows(); ++k) z[k] = b[k] + Dot(w.row(k), p);
}

double LogSumExp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

double Softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double Sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Loss of one row's logits; writes dLoss/dz into `dz` when non-empty.
double RowLoss(std::span<const double> z, const Labels& labels, std::size_t row,
               LossKind loss, std::span<double> dz) {
  const std::size_t k = z.size();
  double value = 0.0;
  if (loss == LossKind::kCrossEntropy) {
    const double lse = LogSumExp(z);
    const int y = labels.class_ids()[row];
    value = lse - z[static_cast<std::size_t>(y)];
    if (!dz.empty()) {
      for (std::size_t c = 0; c < k; ++c) {
        dz[c] = std::exp(z[c] - lse) - (static_cast<int>(c) == y ? 1.0 : 0.0);
      }
    }
  } else {
    for (std::size_t c = 0; c < k; ++c) {
      const double y = labels.Target(row, static_cast<int>(c));
      value += Softplus(z[c]) - y * z[c];
      if (!dz.empty()) dz[c] = Sigmoid(z[c]) - y;
    }
  }
  return value;
}

// Mean loss over `rows` of (base_logits + W·x + b); accumulates the gradient
// of that mean into gw/gb when they are non-null. `base_logits` may be null.
double BatchLossAndGradient(const Matrix& w, std::span<const double> b,
                            const Matrix& x, const Matrix* base_logits,
                            const Labels& labels, LossKind loss,
                            std::span<const std::size_t> rows, Matrix* gw,
                            std::vector<double>* gb) {
  const std::size_t k = w.rows();
  std::vector<double> z(k), dz(k);
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    const auto xr = x.row(r);
    RowLogits(w, b, xr, z);
    if (base_logits != nullptr) {
      for (std::size_t c = 0; c < k; ++c) z[c] += (*base_logits)(r, c);
    }
    total += RowLoss(z, labels, r, loss,
                     gw != nullptr ? std::span<double>(dz) : std::span<double>());
    if (gw != nullptr) {
      for (std::size_t c = 0; c < k; ++c) {
        const double g = dz[c] * inv;
        if (g == 0.0) continue;
        auto grow = gw->row(c);
        for (std::size_t j = 0; j < xr.size(); ++j) grow[j] += g * xr[j];
        (*gb)[c] += g;
      }
    }
  }
  return total * inv;
}

std::vector<std::size_t> AllRows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

double ElasticPenalty(const Matrix& w, double alpha) {
  double l1 = 0.0, l2 = 0.0;
  for (double v : w.data()) {
    l1 += std::fabs(v);
    l2 += v * v;
  }
  return alpha * l1 + (1.0 - alpha) * l2;
}

// Learning rate at step t of a run of `horizon` steps: decays
// hyperbolically to a tenth of the initial rate.
double StepSize(double initial, std::int64_t t, std::int64_t horizon) {
  return initial / (1.0 + 9.0 * static_cast<double>(t) / static_cast<double>(horizon));
}

void CheckMode(const Labels& labels, LossKind loss) {
  if (labels.mode() == LabelMode::kMultiLabel && loss == LossKind::kCrossEntropy) {
    throw ArgumentError("multi-label data needs per_class_binary_cross_entropy");
  }
}

// Proximal SGD loop shared by TrainPcbm and ContinueTraining.
void RunProximalSgd(PCBMModel& model, const Matrix& projections,
                    const Labels& labels, std::int64_t steps,
                    std::uint64_t seed, TrainingTrace* trace) {
  const PCBMConfig& cfg = model.config;
  const std::size_t n = projections.rows();
  const std::size_t k = static_cast<std::size_t>(model.num_classes());
  const double coef = PenaltyCoefficient(cfg, model.num_concepts(), model.num_classes());
  const double l2_coef = coef * (1.0 - cfg.alpha);
  const double l1_coef = coef * cfg.alpha;
  const std::size_t batch = std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));

  Rng rng(DeriveSeed(seed, "pcbm/sgd"));
  std::vector<std::size_t> order = AllRows(n);
  Matrix gw(k, model.num_concepts());
  std::vector<double> gb(k);
  std::int64_t t = 0;
  while (t < steps) {
    rng.Shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n && t < steps; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      std::fill(gw.data().begin(), gw.data().end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      const double loss = BatchLossAndGradient(model.weights, model.bias, projections,
                                               nullptr, labels, cfg.loss, rows, &gw, &gb);
      if (!std::isfinite(loss)) {
        throw DivergenceError(t, "non-finite training loss at step " + std::to_string(t));
      }
      const double eta = StepSize(cfg.learning_rate, t, steps);
      const double threshold = eta * l1_coef;
      auto wd = model.weights.data();
      auto gd = gw.data();
      for (std::size_t j = 0; j < wd.size(); ++j) {
        double v = wd[j] - eta * (gd[j] + 2.0 * l2_coef * wd[j]);
        if (v > threshold) {
          v -= threshold;
        } else if (v < -threshold) {
          v += threshold;
        } else {
          v = 0.0;
        }
        wd[j] = v;
      }
      for (std::size_t c = 0; c < k; ++c) model.bias[c] -= eta * gb[c];
      ++t;
    }
    if (trace != nullptr) {
      trace->epoch_objectives.push_back(PenalizedObjective(model, projections, labels));
    }
  }
  if (!model.weights.AllFinite()) {
    throw DivergenceError(t, "non-finite weights after step " + std::to_string(t));
  }
  if (trace != nullptr) trace->steps += t;
}

}  // namespace

// ------------------------------------------------------------- objective

double MeanLoss(const Matrix& weights, std::span<const double> bias,
                const Matrix& projections, const Labels& labels, LossKind loss) {
  const auto rows = AllRows(projections.rows());
  return BatchLossAndGradient(weights, bias, projections, nullptr, labels, loss,
                              rows, nullptr, nullptr);
}

double PenalizedObjective(const PCBMModel& model, const Matrix& projections,
                          const Labels& labels) {
  CheckShapes(projections, labels, model.num_concepts(), model.num_classes());
  const double coef =
      PenaltyCoefficient(model.config, model.num_concepts(), model.num_classes());
  return MeanLoss(model.weights, model.bias, projections, labels, model.config.loss) +
         coef * ElasticPenalty(model.weights, model.config.alpha);
}

double SmoothObjective(const Matrix& weights, std::span<const double> bias,
                       const Matrix& projections, const Labels& labels,
                       const PCBMConfig& cfg, SmoothGradient* gradient) {
  const int k = static_cast<int>(weights.rows());
  CheckShapes(projections, labels, weights.cols(), k);
  const double l2_coef = PenaltyCoefficient(cfg, weights.cols(), k) * (1.0 - cfg.alpha);
  const auto rows = AllRows(projections.rows());
  Matrix* gw = nullptr;
  std::vector<double>* gb = nullptr;
  if (gradient != nullptr) {
    gradient->weights = Matrix(weights.rows(), weights.cols());
    gradient->bias.assign(weights.rows(), 0.0);
    gw = &gradient->weights;
    gb = &gradient->bias;
  }
  double value = BatchLossAndGradient(weights, bias, projections, nullptr, labels,
                                      cfg.loss, rows, gw, gb);
  double sq = 0.0;
  for (std::size_t j = 0; j < weights.data().size(); ++j) {
    const double v = weights.data()[j];
    sq += v * v;
    if (gw != nullptr) gw->data()[j] += 2.0 * l2_coef * v;
  }
  return value + l2_coef * sq;
}

// ------------------------------------------------------------- training

std::int64_t StepsForEpochs(std::size_t n, int batch_size, int epochs) {
  const auto b = static_cast<std::size_t>(std::max(1, batch_size));
  return static_cast<std::int64_t>((n + b - 1) / b) * epochs;
}

PCBMModel TrainPcbm(const Matrix& projections, const Labels& labels,
                    const PCBMConfig& cfg,
                    const std::vector<std::string>& concept_names,
                    const std::vector<std::string>& class_names,
                    TrainingTrace* trace) {
  cfg.Validate();
  const int k = labels.num_classes();
  labels.Validate();
  CheckShapes(projections, labels, projections.cols(), k);
  CheckMode(labels, cfg.loss);
  if (projections.rows() == 0) throw TrainingError("no training rows");
  if (concept_names.size() != projections.cols()) {
    throw ArgumentError("concept_names length != projection width");
  }
  if (static_cast<int>(class_names.size()) != k) {
    throw ArgumentError("class_names length != K");
  }
  if (!projections.AllFinite()) throw ValidationError("non-finite projection value");
  if (labels.mode() == LabelMode::kSingleLabel) {
    std::vector<bool> present(static_cast<std::size_t>(k), false);
    for (int id : labels.class_ids()) present[static_cast<std::size_t>(id)] = true;
    for (int c = 0; c < k; ++c) {
      if (!present[static_cast<std::size_t>(c)]) {
        throw TrainingError("class '" + class_names[static_cast<std::size_t>(c)] +
                            "' has no training samples");
      }
    }
  }

  PCBMModel model;
  model.weights = Matrix(static_cast<std::size_t>(k), projections.cols());
  model.bias.assign(static_cast<std::size_t>(k), 0.0);
  model.concept_names = concept_names;
  model.class_names = class_names;
  model.config = cfg;
  model.mode = labels.mode();
  RunProximalSgd(model, projections, labels, cfg.max_steps, cfg.seed, trace);
  return model;
}

PCBMModel ContinueTraining(const PCBMModel& model, const Matrix& projections,
                           const Labels& labels, std::int64_t steps,
                           std::uint64_t seed, TrainingTrace* trace) {
  model.Validate();
  CheckShapes(projections, labels, model.num_concepts(), model.num_classes());
  CheckMode(labels, model.config.loss);
  if (steps < 1) throw ArgumentError("steps must be >= 1");
  PCBMModel out = model;
  RunProximalSgd(out, projections, labels, steps, seed, trace);
  return out;
}

LambdaSelection SelectLambda(const Matrix& projections, const Labels& labels,
                             const PCBMConfig& base,
                             const std::vector<double>& grid,
                             double validation_fraction, std::uint64_t seed) {
  if (grid.empty()) throw ArgumentError("lambda grid is empty");
  EmbeddingDataset all;
  all.embeddings = projections;
  all.labels = labels;
  for (int c = 0; c < labels.num_classes(); ++c) {
    all.class_names.push_back("class" + std::to_string(c));
  }
  const DatasetSplit split = SplitDataset(all, 1.0 - validation_fraction, seed);
  std::vector<std::string> concept_names(projections.cols());
  for (std::size_t i = 0; i < concept_names.size(); ++i) {
    concept_names[i] = "c" + std::to_string(i);
  }
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());

  LambdaSelection sel;
  double best = -1.0;
  for (double lambda : sorted) {
    PCBMConfig cfg = base;
    cfg.lambda = lambda;
    const PCBMModel m = TrainPcbm(split.first.embeddings, split.first.labels, cfg,
                                  concept_names, all.class_names);
    const Prediction pred = Predict(m, split.second.embeddings);
    double score;
    if (labels.mode() == LabelMode::kSingleLabel) {
      score = Accuracy(pred.labels, split.second.labels.class_ids()).overall;
    } else {
      score = MeanAveragePrecision(pred.scores, split.second.labels.indicators()).overall;
    }
    sel.grid.push_back(lambda);
    sel.validation_accuracy.push_back(score);
    if (score >= best) {
      best = score;
      sel.lambda = lambda;
    }
  }
  return sel;
}

PCBMModel TrainLinearProbe(const Matrix& embeddings, const Labels& labels,
                           const PCBMConfig& cfg,
                           const std::vector<std::string>& class_names) {
  std::vector<std::string> names(embeddings.cols());
  for (std::size_t i = 0; i < names.size(); ++i) names[i] = "e" + std::to_string(i);
  return TrainPcbm(embeddings, labels, cfg, names, class_names);
}

// ------------------------------------------------------------ prediction

void ScoreLogits(const Matrix& logits, LossKind loss, Matrix* scores,
                 std::vector<int>* labels) {
  const std::size_t n = logits.rows(), k = logits.cols();
  *scores = Matrix(n, k);
  labels->assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto z = logits.row(r);
    auto s = scores->row(r);
    if (loss == LossKind::kCrossEntropy) {
      const double lse = LogSumExp(z);
      for (std::size_t c = 0; c < k; ++c) s[c] = std::exp(z[c] - lse);
    } else {
      for (std::size_t c = 0; c < k; ++c) s[c] = Sigmoid(z[c]);
    }
    (*labels)[r] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
}

Prediction Predict(const PCBMModel& model, const Matrix& projections) {
  if (projections.cols() != model.num_concepts()) {
    throw ArgumentError("projection width " + std::to_string(projections.cols()) +
                        " != N_c " + std::to_string(model.num_concepts()));
  }
  const std::size_t k = static_cast<std::size_t>(model.num_classes());
  Prediction out;
  out.logits = Matrix(projections.rows(), k);
  for (std::size_t r = 0; r < projections.rows(); ++r) {
    RowLogits(model.weights, model.bias, projections.row(r), out.logits.row(r));
  }
  ScoreLogits(out.logits, model.config.loss, &out.scores, &out.labels);
  return out;
}

HybridPrediction PredictHybrid(const HybridModel& model, const Matrix& embeddings,
                               const Matrix& projections) {
  if (embeddings.cols() != model.embedding_dim()) {
    throw ArgumentError("embedding width " + std::to_string(embeddings.cols()) +
                        " != residual input dimension " +
                        std::to_string(model.embedding_dim()));
  }
  if (embeddings.rows() != projections.rows()) {
    throw ArgumentError("embeddings and projections differ in row count");
  }
  HybridPrediction out;
  out.concept_logits = Predict(model.pcbm, projections).logits;
  const std::size_t k = static_cast<std::size_t>(model.pcbm.num_classes());
  out.residual_logits = Matrix(embeddings.rows(), k);
  out.logits = Matrix(embeddings.rows(), k);
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    RowLogits(model.residual_weights, model.residual_bias, embeddings.row(r),
              out.residual_logits.row(r));
    for (std::size_t c = 0; c < k; ++c) {
      out.logits(r, c) = out.concept_logits(r, c) + out.residual_logits(r, c);
    }
  }
  ScoreLogits(out.logits, model.pcbm.config.loss, &out.scores, &out.labels);
  return out;
}

// ------------------------------------------------------------------ hybrid

namespace {

void RunAdam(HybridModel& model, const Matrix& embeddings, const Matrix& concept_logits,
             const Labels& labels, int epochs, std::uint64_t seed) {
  const ResidualConfig& cfg = model.residual_config;
  const std::size_t n = embeddings.rows();
  const std::size_t k = model.residual_weights.rows();
  const std::size_t d = model.residual_weights.cols();
  const std::size_t batch = std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));
  const LossKind loss = model.pcbm.config.loss;

  Matrix m_w(k, d), v_w(k, d), gw(k, d);
  std::vector<double> m_b(k, 0.0), v_b(k, 0.0), gb(k, 0.0);
  Rng rng(DeriveSeed(seed, "residual/adam"));
  std::vector<std::size_t> order = AllRows(n);
  std::int64_t t = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.Shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      std::fill(gw.data().begin(), gw.data().end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      const double value =
          BatchLossAndGradient(model.residual_weights, model.residual_bias, embeddings,
                               &concept_logits, labels, loss, rows, &gw, &gb);
      if (!std::isfinite(value)) {
        throw DivergenceError(t, "non-finite residual loss at step " + std::to_string(t));
      }
      ++t;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      auto w = model.residual_weights.data();
      auto g = gw.data();
      auto mw = m_w.data();
      auto vw = v_w.data();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double grad = g[j] + cfg.l2 * w[j];
        mw[j] = cfg.beta1 * mw[j] + (1.0 - cfg.beta1) * grad;
        vw[j] = cfg.beta2 * vw[j] + (1.0 - cfg.beta2) * grad * grad;
        w[j] -= cfg.learning_rate * (mw[j] / c1) / (std::sqrt(vw[j] / c2) + cfg.epsilon);
      }
      for (std::size_t c = 0; c < k; ++c) {
        m_b[c] = cfg.beta1 * m_b[c] + (1.0 - cfg.beta1) * gb[c];
        v_b[c] = cfg.beta2 * v_b[c] + (1.0 - cfg.beta2) * gb[c] * gb[c];
        model.residual_bias[c] -=
            cfg.learning_rate * (m_b[c] / c1) / (std::sqrt(v_b[c] / c2) + cfg.epsilon);
      }
    }
  }
}

}  // namespace

HybridModel TrainResidual(const PCBMModel& pcbm, const Matrix& embeddings,
                          const Matrix& projections, const Labels& labels,
                          const ResidualConfig& cfg, ResidualTrace* trace) {
  cfg.Validate();
  pcbm.Validate();
  CheckShapes(projections, labels, pcbm.num_concepts(), pcbm.num_classes());
  CheckMode(labels, pcbm.config.loss);
  if (embeddings.rows() != projections.rows() || embeddings.rows() == 0) {
    throw ArgumentError("embeddings and projections differ in row count");
  }
  const std::uint64_t before = Fingerprint(pcbm);

  HybridModel model;
  model.pcbm = pcbm;
  model.residual_config = cfg;
  model.residual_weights = Matrix(static_cast<std::size_t>(pcbm.num_classes()),
                                  embeddings.cols());
  model.residual_bias.assign(static_cast<std::size_t>(pcbm.num_classes()), 0.0);
  model.pcbm_fingerprint = before;

  const Matrix concept_logits = Predict(model.pcbm, projections).logits;
  RunAdam(model, embeddings, concept_logits, labels, cfg.epochs, cfg.seed);

  if (Fingerprint(model.pcbm) != before || Fingerprint(pcbm) != before) {
    throw FrozenBottleneckError("concept head changed during residual training");
  }
  if (trace != nullptr) {
    const auto rows = AllRows(embeddings.rows());
    trace->pcbm_loss = MeanLoss(pcbm.weights, pcbm.bias, projections, labels,
                                pcbm.config.loss);
    trace->hybrid_loss = BatchLossAndGradient(
        model.residual_weights, model.residual_bias, embeddings, &concept_logits,
        labels, pcbm.config.loss, rows, nullptr, nullptr);
  }
  return model;
}

HybridModel ContinueResidual(const HybridModel& model, const Matrix& embeddings,
                             const Matrix& projections, const Labels& labels,
                             int epochs, std::uint64_t seed) {
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  CheckShapes(projections, labels, model.pcbm.num_concepts(), model.pcbm.num_classes());
  if (embeddings.cols() != model.embedding_dim() ||
      embeddings.rows() != projections.rows()) {
    throw ArgumentError("embeddings do not match the residual head");
  }
  HybridModel out = model;
  const std::uint64_t before = Fingerprint(out.pcbm);
  const Matrix concept_logits = Predict(out.pcbm, projections).logits;
  RunAdam(out, embeddings, concept_logits, labels, epochs, seed);
  if (Fingerprint(out.pcbm) != before) {
    throw FrozenBottleneckError("concept head changed during residual training");
  }
  return out;
}

// ----------------------------------------------------------- explanation

std::vector<ConceptWeight> ExplainClass(const PCBMModel& model, int class_id,
                                        std::size_t k) {
  if (class_id < 0 || class_id >= model.num_classes()) {
    throw ArgumentError("class id " + std::to_string(class_id) + " out of range");
  }
  if (k < 1 || k > model.num_concepts()) {
    throw ArgumentError("k must be in [1, N_c]");
  }
  std::vector<ConceptWeight> all;
  const auto row = model.weights.row(static_cast<std::size_t>(class_id));
  for (std::size_t i = 0; i < row.size(); ++i) {
    all.push_back({model.concept_names[i], i, row[i]});
  }
  std::stable_sort(all.begin(), all.end(), [](const ConceptWeight& a, const ConceptWeight& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.concept_name < b.concept_name;
  });
  all.resize(k);
  return all;
}

// ----------------------------------------------------------------- I/O

namespace {

constexpr char kModelSchema[] = "pcbm.model/1";

Matrix Column(std::span<const double> v) {
  return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

json ConfigJson(const PCBMConfig& cfg, std::size_t nc, int k) {
  return {{"lambda", cfg.lambda},
          {"penalty_coefficient", PenaltyCoefficient(cfg, nc, k)},
          {"alpha", cfg.alpha},
          {"max_steps", cfg.max_steps},
          {"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed},
          {"loss", LossKindName(cfg.loss)}};
}

PCBMConfig ConfigFromJson(const json& j) {
  PCBMConfig cfg;
  cfg.lambda = j.at("lambda").get<double>();
  cfg.alpha = j.at("alpha").get<double>();
  cfg.max_steps = j.at("max_steps").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.loss = ParseLossKind(j.at("loss").get<std::string>());
  return cfg;
}

json ResidualJson(const ResidualConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate}, {"l2", cfg.l2},
          {"epochs", cfg.epochs},               {"batch_size", cfg.batch_size},
          {"beta1", cfg.beta1},                 {"beta2", cfg.beta2},
          {"epsilon", cfg.epsilon},             {"seed", cfg.seed}};
}

ResidualConfig ResidualFromJson(const json& j) {
  ResidualConfig cfg;
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.l2 = j.at("l2").get<double>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.epsilon = j.at("epsilon").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

json WritePcbmPart(const PCBMModel& model, const fs::path& dir) {
  model.Validate();
  fs::create_directories(dir);
  json checksums;
  checksums["weights.emb1"] = ChecksumHex(
      WriteEmb1(dir / "weights.emb1", model.weights, Dtype::kFloat64).payload_checksum);
  checksums["bias.emb1"] = ChecksumHex(
      WriteEmb1(dir / "bias.emb1", Column(model.bias), Dtype::kFloat64).payload_checksum);
  return {{"schema_version", kModelSchema},
          {"kind", "pcbm"},
          {"mode", LabelModeName(model.mode)},
          {"concept_names", model.concept_names},
          {"class_names", model.class_names},
          {"config", ConfigJson(model.config, model.num_concepts(), model.num_classes())},
          {"fingerprint", ChecksumHex(Fingerprint(model))},
          {"checksums", checksums}};
}

Matrix ReadChecked(const fs::path& dir, const std::string& file, const json& meta) {
  Emb1Info info;
  Matrix m = ReadEmb1(dir / file, &info);
  const auto& sums = meta.at("checksums");
  if (!sums.contains(file) ||
      sums.at(file).get<std::string>() != ChecksumHex(info.payload_checksum)) {
    throw IntegrityError(file + " checksum does not match meta.json");
  }
  return m;
}

json ReadMeta(const fs::path& dir) {
  json meta = ReadJsonFile(dir / "meta.json");
  if (meta.value("schema_version", "") != kModelSchema) {
    throw FormatError("unsupported model schema in " + dir.string());
  }
  return meta;
}

}  // namespace

void SaveModel(const PCBMModel& model, const fs::path& dir) {
  WriteJsonFile(dir / "meta.json", WritePcbmPart(model, dir));
}

void SaveModel(const HybridModel& model, const fs::path& dir) {
  json meta = WritePcbmPart(model.pcbm, dir);
  meta["kind"] = "hybrid";
  meta["checksums"]["residual_weights.emb1"] = ChecksumHex(
      WriteEmb1(dir / "residual_weights.emb1", model.residual_weights, Dtype::kFloat64)
          .payload_checksum);
  meta["checksums"]["residual_bias.emb1"] = ChecksumHex(
      WriteEmb1(dir / "residual_bias.emb1", Column(model.residual_bias), Dtype::kFloat64)
          .payload_checksum);
  meta["residual_config"] = ResidualJson(model.residual_config);
  meta["pcbm_fingerprint"] = ChecksumHex(model.pcbm_fingerprint);
  WriteJsonFile(dir / "meta.json", meta);
}

PCBMModel LoadPcbmModel(const fs::path& dir) {
  const json meta = ReadMeta(dir);
  PCBMModel m;
  try {
    m.weights = ReadChecked(dir, "weights.emb1", meta);
    const Matrix bias = ReadChecked(dir, "bias.emb1", meta);
    m.bias.assign(bias.data().begin(), bias.data().end());
    m.concept_names = meta.at("concept_names").get<std::vector<std::string>>();
    m.class_names = meta.at("class_names").get<std::vector<std::string>>();
    m.mode = ParseLabelMode(meta.at("mode").get<std::string>());
    m.config = ConfigFromJson(meta.at("config"));
  } catch (const json::exception& e) {
    throw FormatError("bad model metadata in " + dir.string() + ": " + e.what());
  }
  try {
    m.Validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("model in ") + dir.string() + ": " + e.what());
  }
  return m;
}

bool IsHybridModelDir(const fs::path& dir) {
  return ReadMeta(dir).value("kind", "") == "hybrid";
}

HybridModel LoadHybridModel(const fs::path& dir) {
  const json meta = ReadMeta(dir);
  if (meta.value("kind", "") != "hybrid") {
    throw FormatError(dir.string() + " holds a plain PCBM, not a hybrid model");
  }
  HybridModel h;
  h.pcbm = LoadPcbmModel(dir);
  try {
    h.residual_weights = ReadChecked(dir, "residual_weights.emb1", meta);
    const Matrix rb = ReadChecked(dir, "residual_bias.emb1", meta);
    h.residual_bias.assign(rb.data().begin(), rb.data().end());
    h.residual_config = ResidualFromJson(meta.at("residual_config"));
    h.pcbm_fingerprint = ParseChecksumHex(meta.at("pcbm_fingerprint").get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError("bad hybrid metadata in " + dir.string() + ": " + e.what());
  }
  if (h.residual_weights.rows() != h.pcbm.weights.rows() ||
      h.residual_bias.size() != h.pcbm.bias.size()) {
    throw FormatError("residual head shape does not match the concept head");
  }
  if (Fingerprint(h.pcbm) != h.pcbm_fingerprint) {
    throw FrozenBottleneckError("stored concept head does not match its fingerprint");
  }
  return h;
}

}  // namespace pcbm

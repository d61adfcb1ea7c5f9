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

// Sparse interpretable predictor over concept projections, and the hybrid
// variant that adds a linear residual head on raw embeddings while keeping
// the concept head frozen.

#ifndef PCBM_PCBM_MODEL_H_
#define PCBM_PCBM_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pcbm/dataset.h"
#include "pcbm/matrix.h"

namespace pcbm {

enum class LossKind { kCrossEntropy, kPerClassBinaryCrossEntropy };

std::string LossKindName(LossKind loss);
LossKind ParseLossKind(const std::string& name);

struct PCBMConfig {
  // Raw regularization strength. The effective penalty coefficient is
  // lambda / (N_c · K); see PenaltyCoefficient().
  double lambda = 0.01;
  double alpha = 0.99;  // elastic-net mix: α·L1 + (1 − α)·L2²
  int max_steps = 5000;
  double learning_rate = 0.5;
  int batch_size = 8;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kCrossEntropy;

  void Validate() const;
  bool operator==(const PCBMConfig& other) const = default;
};

// λ/(N_c·K).
double PenaltyCoefficient(const PCBMConfig& cfg, std::size_t num_concepts,
                          int num_classes);

struct PCBMModel {
  Matrix weights;             // K×N_c
  std::vector<double> bias;   // K
  std::vector<std::string> concept_names;
  std::vector<std::string> class_names;
  PCBMConfig config;
  LabelMode mode = LabelMode::kSingleLabel;

  int num_classes() const { return static_cast<int>(weights.rows()); }
  std::size_t num_concepts() const { return weights.cols(); }
  void Validate() const;
  bool operator==(const PCBMModel& other) const = default;
};

// FNV-1a over the model's weights, bias and names; used to prove the
// concept head was not touched.
std::uint64_t Fingerprint(const PCBMModel& model);

struct ResidualConfig {
  double learning_rate = 0.01;
  double l2 = 0.01;  // added to the residual-weight gradient as l2·W_r
  int epochs = 10;
  int batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void Validate() const;
  bool operator==(const ResidualConfig& other) const = default;
};

struct HybridModel {
  PCBMModel pcbm;                      // frozen
  Matrix residual_weights;             // K×d
  std::vector<double> residual_bias;   // K
  ResidualConfig residual_config;
  std::uint64_t pcbm_fingerprint = 0;  // Fingerprint(pcbm) at training time

  std::size_t embedding_dim() const { return residual_weights.cols(); }
  bool operator==(const HybridModel& other) const = default;
};

// ------------------------------------------------------------- objective

// Mean loss of logits W·p + b (softmax cross-entropy or per-class sigmoid
// binary cross-entropy, summed over classes).
double MeanLoss(const Matrix& weights, std::span<const double> bias,
                const Matrix& projections, const Labels& labels, LossKind loss);

// Mean loss + λ/(N_c·K)·(α||W||₁ + (1 − α)||W||₂²).
double PenalizedObjective(const PCBMModel& model, const Matrix& projections,
                          const Labels& labels);

// Value and gradient of the smooth part: mean loss + c·(1 − α)·||W||₂².
struct SmoothGradient {
  Matrix weights;
  std::vector<double> bias;
};
double SmoothObjective(const Matrix& weights, std::span<const double> bias,
                       const Matrix& projections, const Labels& labels,
                       const PCBMConfig& cfg, SmoothGradient* gradient);

// ------------------------------------------------------------- training

struct TrainingTrace {
  std::vector<double> epoch_objectives;  // full-data penalized objective
  std::int64_t steps = 0;
};

// Minimizes the penalized objective with seeded mini-batch proximal SGD:
// a gradient step on the smooth part followed by soft-thresholding for the
// L1 part, so exact zeros occur. Parameters start at zero.
PCBMModel TrainPcbm(const Matrix& projections, const Labels& labels,
                    const PCBMConfig& cfg,
                    const std::vector<std::string>& concept_names,
                    const std::vector<std::string>& class_names,
                    TrainingTrace* trace = nullptr);

// Runs `steps` more proximal steps from the model's current parameters
// (learning-rate schedule restarts). Used for fine-tuning.
PCBMModel ContinueTraining(const PCBMModel& model, const Matrix& projections,
                           const Labels& labels, std::int64_t steps,
                           std::uint64_t seed, TrainingTrace* trace = nullptr);

// Steps in `epochs` passes of size-`batch_size` batches over n rows.
std::int64_t StepsForEpochs(std::size_t n, int batch_size, int epochs);

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<double> grid;
  std::vector<double> validation_accuracy;
};

// Picks λ from `grid` by accuracy on a stratified held-out part of the
// training data (ties go to the larger λ).
LambdaSelection SelectLambda(const Matrix& projections, const Labels& labels,
                             const PCBMConfig& base,
                             const std::vector<double>& grid,
                             double validation_fraction, std::uint64_t seed);

inline const std::vector<double>& DefaultLambdaGrid() {
  static const std::vector<double> grid = {0.001, 0.01, 0.1, 1.0, 2.0};
  return grid;
}

// Multinomial logistic regression on raw embeddings; the reference linear
// probe the hybrid model is compared against.
PCBMModel TrainLinearProbe(const Matrix& embeddings, const Labels& labels,
                           const PCBMConfig& cfg,
                           const std::vector<std::string>& class_names);

// ------------------------------------------------------------ prediction

struct Prediction {
  Matrix logits;   // n×K
  Matrix scores;   // softmax or per-class sigmoid of logits
  std::vector<int> labels;  // argmax
};

Prediction Predict(const PCBMModel& model, const Matrix& projections);

struct HybridPrediction {
  Matrix logits;           // concept_logits + residual_logits
  Matrix concept_logits;   // identical to Predict(model.pcbm, ...).logits
  Matrix residual_logits;
  Matrix scores;
  std::vector<int> labels;
};

HybridPrediction PredictHybrid(const HybridModel& model, const Matrix& embeddings,
                               const Matrix& projections);

// Scores and argmax from raw logits under `loss`.
void ScoreLogits(const Matrix& logits, LossKind loss, Matrix* scores,
                 std::vector<int>* labels);

// ------------------------------------------------------------------ hybrid

struct ResidualTrace {
  double pcbm_loss = 0.0;    // mean training loss of the concept head alone
  double hybrid_loss = 0.0;  // mean training loss at termination
};

// Fits only (W_r, b_r) with Adam; the concept head is copied unchanged and
// its fingerprint verified afterwards.
HybridModel TrainResidual(const PCBMModel& pcbm, const Matrix& embeddings,
                          const Matrix& projections, const Labels& labels,
                          const ResidualConfig& cfg,
                          ResidualTrace* trace = nullptr);

// Runs more residual epochs from the current residual weights against the
// hybrid's (possibly edited) concept head.
HybridModel ContinueResidual(const HybridModel& model, const Matrix& embeddings,
                             const Matrix& projections, const Labels& labels,
                             int epochs, std::uint64_t seed);

// ----------------------------------------------------------- explanation

struct ConceptWeight {
  std::string concept_name;
  std::size_t index = 0;
  double weight = 0.0;
  bool operator==(const ConceptWeight& other) const = default;
};

// The k largest signed weights of a class row, descending, ties by name.
std::vector<ConceptWeight> ExplainClass(const PCBMModel& model, int class_id,
                                        std::size_t k);

// ----------------------------------------------------------------- I/O

// Model directory: weights.emb1, bias.emb1, meta.json, and for hybrids
// residual_weights.emb1 and residual_bias.emb1. Matrices are float64.
void SaveModel(const PCBMModel& model, const std::filesystem::path& dir);
void SaveModel(const HybridModel& model, const std::filesystem::path& dir);
PCBMModel LoadPcbmModel(const std::filesystem::path& dir);
HybridModel LoadHybridModel(const std::filesystem::path& dir);
bool IsHybridModelDir(const std::filesystem::path& dir);

}  // namespace pcbm

#endif  // PCBM_PCBM_MODEL_H_

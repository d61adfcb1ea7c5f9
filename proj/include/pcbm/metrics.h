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

// Evaluation metrics and the PCBM vs PCBM-h consistency analysis. All
// functions are pure.

#ifndef PCBM_METRICS_H_
#define PCBM_METRICS_H_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcbm/matrix.h"

namespace pcbm {

enum class MetricName { kAccuracy, kAuroc, kMap };

std::string MetricNameString(MetricName m);
MetricName ParseMetricName(const std::string& name);

struct EvalReport {
  MetricName metric = MetricName::kAccuracy;
  double overall = 0.0;
  std::vector<double> per_class;
  std::vector<std::size_t> per_class_n;  // support of each class
  std::size_t n = 0;
};

// Fraction of exact matches. Per-class accuracy is over each class's true
// instances (0 with zero support). `num_classes` < 0 infers max label + 1.
EvalReport Accuracy(std::span<const int> predictions, std::span<const int> labels,
                    int num_classes = -1);

// Accuracy restricted to rows whose true class is `class_id`.
double ClassAccuracy(std::span<const int> predictions, std::span<const int> labels,
                     int class_id);

// P(score of random positive > score of random negative), ties count ½.
// Labels are 0/1. Throws UndefinedMetricError when one class is absent.
double Auroc(std::span<const double> scores, std::span<const int> labels);

// One-vs-rest AUROC per class from n×K scores. With K = 2 `overall` is the
// AUROC of class 1, otherwise the unweighted class mean.
EvalReport AurocReport(const Matrix& scores, std::span<const int> labels);

// Non-interpolated average precision of one ranking; ties in score keep the
// original row order.
double AveragePrecision(std::span<const double> scores, std::span<const int> labels);

// Per-class AP over n×K scores and 0/1 indicators, unweighted mean overall.
EvalReport MeanAveragePrecision(const Matrix& scores, const Matrix& indicators,
                                const std::vector<std::string>& class_names = {});

struct ConsistencyBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t n = 0;
  double pcbm_accuracy = 0.0;     // 0 when n = 0
  double consistency_rate = 0.0;  // argmax agreement, 0 when n = 0
  double confidence_mad = 0.0;    // mean |pcbm_conf − hybrid_conf|
};

enum class Binning { kEqualWidth, kEqualMass };

struct ConsistencyReport {
  Binning binning = Binning::kEqualWidth;
  std::vector<ConsistencyBin> bins;
  std::size_t n = 0;
  std::size_t changed_count = 0;  // hybrid argmax differs from PCBM argmax
  std::size_t fixed_count = 0;    // ... and the hybrid is right
  std::size_t pcbm_error_count = 0;

  double FixedFraction() const;
};

// Bins the PCBM max-class confidence into `bin_count` intervals: equal width
// over [1/K, 1], or equal population by confidence rank (ties by row order).
ConsistencyReport ConsistencyAnalysis(const Matrix& pcbm_scores,
                                      const Matrix& hybrid_scores,
                                      std::span<const int> labels,
                                      int bin_count = 10,
                                      Binning binning = Binning::kEqualWidth);

nlohmann::json ToJson(const EvalReport& report);
nlohmann::json ToJson(const ConsistencyReport& report);

}  // namespace pcbm

#endif  // PCBM_METRICS_H_

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

#include "pcbm/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcbm/errors.h"

namespace pcbm {

using nlohmann::json;

std::string MetricNameString(MetricName m) {
  switch (m) {
    case MetricName::kAccuracy: return "accuracy";
    case MetricName::kAuroc: return "auroc";
    case MetricName::kMap: return "map";
  }
  return "accuracy";
}

MetricName ParseMetricName(const std::string& name) {
  if (name == "accuracy") return MetricName::kAccuracy;
  if (name == "auroc") return MetricName::kAuroc;
  if (name == "map") return MetricName::kMap;
  throw ArgumentError("unknown metric '" + name + "' (accuracy, auroc, map)");
}

EvalReport Accuracy(std::span<const int> predictions, std::span<const int> labels,
                    int num_classes) {
  if (predictions.size() != labels.size()) {
    throw ArgumentError("predictions and labels differ in length");
  }
  if (labels.empty()) throw ArgumentError("accuracy of an empty set");
  int k = num_classes;
  if (k < 0) {
    k = 1 + std::max(*std::max_element(labels.begin(), labels.end()),
                     *std::max_element(predictions.begin(), predictions.end()));
  }
  EvalReport r;
  r.metric = MetricName::kAccuracy;
  r.n = labels.size();
  r.per_class.assign(static_cast<std::size_t>(k), 0.0);
  r.per_class_n.assign(static_cast<std::size_t>(k), 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= k) throw ArgumentError("label out of range");
    const bool hit = predictions[i] == y;
    hits += hit;
    r.per_class_n[static_cast<std::size_t>(y)] += 1;
    r.per_class[static_cast<std::size_t>(y)] += hit;
  }
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    if (r.per_class_n[c] > 0) r.per_class[c] /= static_cast<double>(r.per_class_n[c]);
  }
  r.overall = static_cast<double>(hits) / static_cast<double>(r.n);
  return r;
}

double ClassAccuracy(std::span<const int> predictions, std::span<const int> labels,
                     int class_id) {
  if (predictions.size() != labels.size()) {
    throw ArgumentError("predictions and labels differ in length");
  }
  std::size_t n = 0, hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != class_id) continue;
    ++n;
    hits += predictions[i] == class_id;
  }
  if (n == 0) {
    throw UndefinedMetricError("class " + std::to_string(class_id) + " has no samples");
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double Auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ArgumentError("scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U from mid-ranks.
  double positive_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        positive_rank_sum += mid_rank;
        ++pos;
      } else if (labels[order[t]] != 0) {
        throw ArgumentError("AUROC labels must be 0 or 1");
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) {
    throw UndefinedMetricError("AUROC needs both positive and negative samples");
  }
  const double p = static_cast<double>(pos);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

EvalReport AurocReport(const Matrix& scores, std::span<const int> labels) {
  if (scores.rows() != labels.size()) {
    throw ArgumentError("scores and labels differ in length");
  }
  const std::size_t k = scores.cols();
  EvalReport r;
  r.metric = MetricName::kAuroc;
  r.n = labels.size();
  std::vector<double> column(scores.rows());
  std::vector<int> binary(scores.rows());
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t support = 0;
    for (std::size_t i = 0; i < scores.rows(); ++i) {
      column[i] = scores(i, c);
      binary[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
      support += binary[i];
    }
    r.per_class.push_back(Auroc(column, binary));
    r.per_class_n.push_back(support);
  }
  if (k == 2) {
    r.overall = r.per_class[1];
  } else {
    r.overall = std::accumulate(r.per_class.begin(), r.per_class.end(), 0.0) /
                static_cast<double>(k);
  }
  return r;
}

double AveragePrecision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ArgumentError("scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) throw UndefinedMetricError("average precision needs a positive");
  return sum / static_cast<double>(hits);
}

EvalReport MeanAveragePrecision(const Matrix& scores, const Matrix& indicators,
                                const std::vector<std::string>& class_names) {
  if (scores.rows() != indicators.rows() || scores.cols() != indicators.cols()) {
    throw ArgumentError("score and indicator shapes differ");
  }
  EvalReport r;
  r.metric = MetricName::kMap;
  r.n = scores.rows();
  std::vector<double> column(scores.rows());
  std::vector<int> binary(scores.rows());
  for (std::size_t c = 0; c < scores.cols(); ++c) {
    std::size_t support = 0;
    for (std::size_t i = 0; i < scores.rows(); ++i) {
      column[i] = scores(i, c);
      binary[i] = indicators(i, c) != 0.0 ? 1 : 0;
      support += binary[i];
    }
    if (support == 0) {
      const std::string name =
          c < class_names.size() ? class_names[c] : "class " + std::to_string(c);
      throw UndefinedMetricError("no positives for " + name);
    }
    r.per_class.push_back(AveragePrecision(column, binary));
    r.per_class_n.push_back(support);
  }
  if (r.per_class.empty()) throw ArgumentError("mAP over zero classes");
  r.overall = std::accumulate(r.per_class.begin(), r.per_class.end(), 0.0) /
              static_cast<double>(r.per_class.size());
  return r;
}

double ConsistencyReport::FixedFraction() const {
  return changed_count == 0 ? 1.0
                            : static_cast<double>(fixed_count) /
                                  static_cast<double>(changed_count);
}

ConsistencyReport ConsistencyAnalysis(const Matrix& pcbm_scores,
                                      const Matrix& hybrid_scores,
                                      std::span<const int> labels, int bin_count,
                                      Binning binning) {
  if (pcbm_scores.rows() != hybrid_scores.rows() ||
      pcbm_scores.cols() != hybrid_scores.cols() || pcbm_scores.rows() != labels.size()) {
    throw ArgumentError("consistency inputs are misaligned");
  }
  if (bin_count < 2) throw ArgumentError("bin_count must be >= 2");
  if (pcbm_scores.cols() < 2) throw ArgumentError("need at least 2 classes");
  const double k = static_cast<double>(pcbm_scores.cols());
  const double lo = 1.0 / k;
  const double width = (1.0 - lo) / bin_count;

  ConsistencyReport r;
  r.binning = binning;
  r.n = labels.size();
  r.bins.resize(static_cast<std::size_t>(bin_count));
  for (int b = 0; b < bin_count; ++b) {
    r.bins[static_cast<std::size_t>(b)].lower = lo + b * width;
    r.bins[static_cast<std::size_t>(b)].upper = b + 1 == bin_count ? 1.0 : lo + (b + 1) * width;
  }
  auto argmax = [](std::span<const double> row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  };
  const std::size_t n = labels.size();
  std::vector<double> confidence(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = pcbm_scores.row(i);
    confidence[i] = *std::max_element(p.begin(), p.end());
  }
  std::vector<int> bin_of(n);
  if (binning == Binning::kEqualWidth) {
    for (std::size_t i = 0; i < n; ++i) {
      const int b = static_cast<int>(std::floor((confidence[i] - lo) / width));
      bin_of[i] = std::clamp(b, 0, bin_count - 1);
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return confidence[a] < confidence[b];
    });
    for (std::size_t rank = 0; rank < n; ++rank) {
      bin_of[order[rank]] = static_cast<int>(rank * static_cast<std::size_t>(bin_count) / n);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = pcbm_scores.row(i);
    const auto h = hybrid_scores.row(i);
    const int yp = argmax(p);
    const int yh = argmax(h);
    const double cp = p[static_cast<std::size_t>(yp)];
    const double ch = h[static_cast<std::size_t>(yh)];
    const int b = bin_of[i];
    auto& bin = r.bins[static_cast<std::size_t>(b)];
    bin.n += 1;
    bin.pcbm_accuracy += yp == labels[i];
    bin.consistency_rate += yp == yh;
    bin.confidence_mad += std::fabs(cp - ch);
    r.pcbm_error_count += yp != labels[i];
    if (yp != yh) {
      ++r.changed_count;
      r.fixed_count += yh == labels[i];
    }
  }
  if (binning == Binning::kEqualMass) {
    // Interval bounds become the observed confidence range of each bin.
    for (auto& bin : r.bins) {
      bin.lower = 1.0;
      bin.upper = lo;
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto& bin = r.bins[static_cast<std::size_t>(bin_of[i])];
      bin.lower = std::min(bin.lower, confidence[i]);
      bin.upper = std::max(bin.upper, confidence[i]);
    }
  }
  for (auto& bin : r.bins) {
    if (bin.n == 0) continue;
    const double n = static_cast<double>(bin.n);
    bin.pcbm_accuracy /= n;
    bin.consistency_rate /= n;
    bin.confidence_mad /= n;
  }
  return r;
}

json ToJson(const EvalReport& report) {
  return {{"metric", MetricNameString(report.metric)},
          {"overall", report.overall},
          {"per_class", report.per_class},
          {"per_class_n", report.per_class_n},
          {"n", report.n}};
}

json ToJson(const ConsistencyReport& report) {
  json bins = json::array();
  for (const auto& b : report.bins) {
    json j = {{"lower", b.lower}, {"upper", b.upper}, {"n", b.n}};
    if (b.n > 0) {
      j["pcbm_accuracy"] = b.pcbm_accuracy;
      j["consistency_rate"] = b.consistency_rate;
      j["confidence_mad"] = b.confidence_mad;
    } else {
      j["pcbm_accuracy"] = nullptr;
      j["consistency_rate"] = nullptr;
      j["confidence_mad"] = nullptr;
    }
    bins.push_back(j);
  }
  return {{"binning", report.binning == Binning::kEqualWidth ? "equal_width" : "equal_mass"},
          {"n", report.n},
          {"changed_count", report.changed_count},
          {"fixed_count", report.fixed_count},
          {"pcbm_error_count", report.pcbm_error_count},
          {"fixed_fraction", report.FixedFraction()},
          {"bins", bins}};
}

}  // namespace pcbm

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

#include "pcbm/concept_bank.h"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <set>

#include "json.hpp"
#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "pcbm/random.h"

namespace pcbm {

namespace fs = std::filesystem;
using nlohmann::json;

std::string ConceptSourceName(ConceptSource s) {
  return s == ConceptSource::kCav ? "cav" : "text";
}

ConceptSource ParseConceptSource(const std::string& name) {
  if (name == "cav") return ConceptSource::kCav;
  if (name == "text") return ConceptSource::kText;
  throw FormatError("unknown concept source '" + name + "'");
}

void ConceptVector::Validate() const {
  if (vector.empty()) throw ValidationError("concept '" + name + "' is empty");
  for (double v : vector) {
    if (!std::isfinite(v)) {
      throw ValidationError("concept '" + name + "' has a non-finite entry");
    }
  }
  const double sq = SquaredNorm(vector);
  if (sq == 0.0) throw ValidationError("concept '" + name + "' is the zero vector");
  if (std::fabs(sq - squared_norm) > 1e-9 * sq) {
    throw ValidationError("concept '" + name + "' squared_norm is stale");
  }
}

ConceptBank::ConceptBank(std::vector<ConceptVector> concepts)
    : concepts_(std::move(concepts)) {
  std::set<std::string> names;
  for (const auto& c : concepts_) {
    c.Validate();
    if (!names.insert(c.name).second) {
      throw ArgumentError("duplicate concept name '" + c.name + "'");
    }
    if (dim_ == 0) dim_ = c.vector.size();
    if (c.vector.size() != dim_) {
      throw ArgumentError("concept '" + c.name + "' has dimension " +
                          std::to_string(c.vector.size()) + ", bank has " +
                          std::to_string(dim_));
    }
  }
}

std::vector<std::string> ConceptBank::names() const {
  std::vector<std::string> out;
  out.reserve(concepts_.size());
  for (const auto& c : concepts_) out.push_back(c.name);
  return out;
}

std::optional<std::size_t> ConceptBank::IndexOf(const std::string& name) const {
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    if (concepts_[i].name == name) return i;
  }
  return std::nullopt;
}

Matrix ConceptBank::AsMatrix() const {
  Matrix m(concepts_.size(), dim_);
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    std::copy(concepts_[i].vector.begin(), concepts_[i].vector.end(),
              m.row(i).begin());
  }
  return m;
}

// ------------------------------------------------------------------- SVM

void SvmConfig::Validate() const {
  if (!(regularization_c > 0.0)) throw ArgumentError("regularization_c must be > 0");
  if (max_epochs < 1) throw ArgumentError("max_epochs must be >= 1");
  if (!(tolerance > 0.0)) throw ArgumentError("tolerance must be > 0");
}

double SvmObjective(std::span<const double> w, double b, const Matrix& x,
                    std::span<const int> y, double regularization_c) {
  double hinge = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double margin = y[i] * (Dot(w, x.row(i)) + b);
    hinge += std::max(0.0, 1.0 - margin);
  }
  return 0.5 * SquaredNorm(w) + regularization_c * hinge;
}

SvmSolution TrainLinearSvm(const Matrix& x, std::span<const int> y,
                           const SvmConfig& cfg) {
  cfg.Validate();
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (n == 0 || y.size() != n) throw ArgumentError("SVM needs one label per row");
  for (int label : y) {
    if (label != 1 && label != -1) throw ArgumentError("SVM labels must be +/-1");
  }

  // (1/2)||w||² + C Σ hinge, divided by C·n, is the Pegasos objective with
  // λ = 1/(C·n); the step at iteration t is 1/(λ·t).
  const double lambda = 1.0 / (cfg.regularization_c * static_cast<double>(n));
  const std::int64_t total =
      static_cast<std::int64_t>(cfg.max_epochs) * static_cast<std::int64_t>(n);
  const std::int64_t average_from = total / 2;

  std::vector<double> w(d, 0.0), w_avg(d, 0.0);
  double b = 0.0, b_avg = 0.0;
  std::int64_t t = 0, averaged = 0;
  double previous = std::numeric_limits<double>::infinity();

  Rng rng(DeriveSeed(cfg.seed, "svm"));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  SvmSolution sol;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.Shuffle(std::span<std::size_t>(order));
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const auto xi = x.row(i);
      const double margin = y[i] * (Dot(w, xi) + b);
      const double shrink = 1.0 - 1.0 / static_cast<double>(t);
      for (double& v : w) v *= shrink;
      if (margin < 1.0) {
        const double step = eta * y[i];
        for (std::size_t j = 0; j < d; ++j) w[j] += step * xi[j];
        b += step;
      }
      if (t > average_from) {
        ++averaged;
        const double inv = 1.0 / static_cast<double>(averaged);
        for (std::size_t j = 0; j < d; ++j) w_avg[j] += (w[j] - w_avg[j]) * inv;
        b_avg += (b - b_avg) * inv;
      }
    }
    sol.epochs_run = epoch + 1;
    if (averaged > 0) {
      const double obj = SvmObjective(w_avg, b_avg, x, y, cfg.regularization_c);
      if (std::fabs(previous - obj) <= cfg.tolerance * std::max(1.0, obj)) break;
      previous = obj;
    }
  }
  if (averaged == 0) {
    w_avg = w;
    b_avg = b;
  }
  sol.weights = std::move(w_avg);
  sol.bias = b_avg;
  sol.objective = SvmObjective(sol.weights, sol.bias, x, y, cfg.regularization_c);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double score = Dot(sol.weights, x.row(i)) + sol.bias;
    if ((score > 0.0 ? 1 : -1) == y[i]) ++correct;
  }
  sol.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return sol;
}

ConceptVector TrainCav(const ConceptExampleSet& examples, const SvmConfig& cfg) {
  const Matrix& pos = examples.positives;
  const Matrix& neg = examples.negatives;
  if (pos.rows() < 2 || neg.rows() < 2) {
    throw InsufficientExamplesError(
        examples.concept_name,
        "concept '" + examples.concept_name + "' needs >= 2 positives and negatives");
  }
  if (pos.cols() != neg.cols() || pos.cols() == 0) {
    throw ArgumentError("concept '" + examples.concept_name +
                        "': positives and negatives differ in dimension");
  }
  const std::size_t d = pos.cols();
  Matrix x(pos.rows() + neg.rows(), d);
  std::vector<int> y;
  y.reserve(x.rows());
  for (std::size_t r = 0; r < pos.rows(); ++r) {
    std::copy(pos.row(r).begin(), pos.row(r).end(), x.row(r).begin());
    y.push_back(1);
  }
  for (std::size_t r = 0; r < neg.rows(); ++r) {
    std::copy(neg.row(r).begin(), neg.row(r).end(), x.row(pos.rows() + r).begin());
    y.push_back(-1);
  }
  bool identical = true;
  for (std::size_t r = 1; r < x.rows() && identical; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      if (x(r, j) != x(0, j)) {
        identical = false;
        break;
      }
    }
  }
  if (identical) {
    throw DegenerateConceptError("concept '" + examples.concept_name +
                                 "': all example embeddings are identical");
  }

  SvmConfig local = cfg;
  local.seed = DeriveSeed(cfg.seed, examples.concept_name);
  SvmSolution sol = TrainLinearSvm(x, y, local);

  ConceptVector cv;
  cv.name = examples.concept_name;
  cv.squared_norm = SquaredNorm(sol.weights);
  if (cv.squared_norm == 0.0 || !std::isfinite(cv.squared_norm)) {
    throw DegenerateConceptError("concept '" + examples.concept_name +
                                 "': SVM returned a zero normal vector");
  }
  cv.vector = std::move(sol.weights);
  cv.source = ConceptSource::kCav;
  cv.margin_accuracy = sol.train_accuracy;
  return cv;
}

ConceptBank TrainConceptBank(const std::vector<ConceptExampleSet>& examples,
                             const SvmConfig& cfg, int threads) {
  std::vector<ConceptVector> out(examples.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < examples.size(); ++i) {
      out[i] = TrainCav(examples[i], cfg);
    }
    return ConceptBank(std::move(out));
  }
  std::size_t next = 0;
  while (next < examples.size()) {
    std::vector<std::future<ConceptVector>> batch;
    const std::size_t end =
        std::min(examples.size(), next + static_cast<std::size_t>(threads));
    for (std::size_t i = next; i < end; ++i) {
      batch.push_back(std::async(std::launch::async, [&examples, &cfg, i] {
        return TrainCav(examples[i], cfg);
      }));
    }
    for (std::size_t i = next; i < end; ++i) out[i] = batch[i - next].get();
    next = end;
  }
  return ConceptBank(std::move(out));
}

ConceptBank BuildBankFromText(const std::vector<NamedVector>& vectors) {
  std::vector<ConceptVector> concepts;
  concepts.reserve(vectors.size());
  for (const auto& [name, vec] : vectors) {
    ConceptVector cv;
    cv.name = name;
    cv.vector = vec;
    cv.squared_norm = SquaredNorm(vec);
    cv.source = ConceptSource::kText;
    cv.margin_accuracy = 1.0;
    concepts.push_back(std::move(cv));
  }
  return ConceptBank(std::move(concepts));
}

Matrix Project(const ConceptBank& bank, const Matrix& embeddings) {
  if (embeddings.cols() != bank.dim()) {
    throw ArgumentError("embedding dimension " + std::to_string(embeddings.cols()) +
                        " != concept bank dimension " + std::to_string(bank.dim()));
  }
  Matrix out(embeddings.rows(), bank.size());
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    const auto x = embeddings.row(r);
    for (std::size_t i = 0; i < bank.size(); ++i) {
      out(r, i) = Dot(x, bank[i].vector) / bank[i].squared_norm;
    }
  }
  return out;
}

// ------------------------------------------------------------------- I/O

void SaveConceptBank(const ConceptBank& bank, const fs::path& dir) {
  fs::create_directories(dir);
  const Matrix m = bank.AsMatrix();
  const Emb1Info info = WriteEmb1(dir / "vectors.emb1", m, LosslessDtype(m));
  json concepts = json::array();
  for (const auto& c : bank.concepts()) {
    concepts.push_back({{"name", c.name},
                        {"source", ConceptSourceName(c.source)},
                        {"margin_accuracy", c.margin_accuracy},
                        {"squared_norm", c.squared_norm}});
  }
  WriteJsonFile(dir / "bank.json", {{"schema_version", "pcbm.bank/1"},
                                    {"d", bank.dim()},
                                    {"n_concepts", bank.size()},
                                    {"checksum", ChecksumHex(info.payload_checksum)},
                                    {"concepts", concepts}});
}

ConceptBank LoadConceptBank(const fs::path& dir) {
  const json meta = ReadJsonFile(dir / "bank.json");
  if (meta.value("schema_version", "") != "pcbm.bank/1") {
    throw FormatError("unsupported concept bank schema in " + dir.string());
  }
  Emb1Info info;
  const Matrix m = ReadEmb1(dir / "vectors.emb1", &info);
  if (ChecksumHex(info.payload_checksum) != meta.at("checksum").get<std::string>()) {
    throw IntegrityError("concept bank payload checksum mismatch in " + dir.string());
  }
  const auto& concepts = meta.at("concepts");
  if (concepts.size() != m.rows()) {
    throw FormatError("bank.json lists " + std::to_string(concepts.size()) +
                      " concepts, payload has " + std::to_string(m.rows()));
  }
  std::vector<ConceptVector> out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    ConceptVector cv;
    cv.name = concepts[i].at("name").get<std::string>();
    cv.vector.assign(m.row(i).begin(), m.row(i).end());
    cv.squared_norm = concepts[i].at("squared_norm").get<double>();
    cv.source = ParseConceptSource(concepts[i].at("source").get<std::string>());
    cv.margin_accuracy = concepts[i].at("margin_accuracy").get<double>();
    out.push_back(std::move(cv));
  }
  return ConceptBank(std::move(out));
}

std::vector<NamedVector> LoadNamedVectors(const fs::path& dir) {
  const Matrix m = ReadEmb1(dir / "vectors.emb1");
  const auto names = ReadJsonFile(dir / "names.json").get<std::vector<std::string>>();
  if (names.size() != m.rows()) {
    throw FormatError("names.json has " + std::to_string(names.size()) +
                      " names for " + std::to_string(m.rows()) + " vectors");
  }
  std::vector<NamedVector> out;
  out.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    out.emplace_back(names[i], std::vector<double>(m.row(i).begin(), m.row(i).end()));
  }
  return out;
}

void SaveNamedVectors(const std::vector<NamedVector>& vectors, const fs::path& dir) {
  if (vectors.empty()) throw ArgumentError("no vectors to save");
  const std::size_t d = vectors.front().second.size();
  Matrix m(vectors.size(), d);
  json names = json::array();
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].second.size() != d) throw ArgumentError("ragged named vectors");
    std::copy(vectors[i].second.begin(), vectors[i].second.end(), m.row(i).begin());
    names.push_back(vectors[i].first);
  }
  fs::create_directories(dir);
  WriteEmb1(dir / "vectors.emb1", m, LosslessDtype(m));
  WriteJsonFile(dir / "names.json", names);
}

}  // namespace pcbm

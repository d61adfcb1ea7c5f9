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

#include "pcbm/dataset.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "pcbm/random.h"

namespace pcbm {

namespace fs = std::filesystem;
using nlohmann::json;

std::string LabelModeName(LabelMode mode) {
  return mode == LabelMode::kSingleLabel ? "single_label" : "multi_label";
}

LabelMode ParseLabelMode(const std::string& name) {
  if (name == "single_label") return LabelMode::kSingleLabel;
  if (name == "multi_label") return LabelMode::kMultiLabel;
  throw FormatError("unknown label mode '" + name + "'");
}

// ---------------------------------------------------------------- Labels

Labels Labels::Single(std::vector<int> class_ids, int num_classes) {
  Labels l;
  l.mode_ = LabelMode::kSingleLabel;
  l.num_classes_ = num_classes;
  l.class_ids_ = std::move(class_ids);
  return l;
}

Labels Labels::Multi(Matrix indicators) {
  Labels l;
  l.mode_ = LabelMode::kMultiLabel;
  l.num_classes_ = static_cast<int>(indicators.cols());
  l.indicators_ = std::move(indicators);
  return l;
}

std::size_t Labels::size() const {
  return mode_ == LabelMode::kSingleLabel ? class_ids_.size()
                                          : indicators_.rows();
}

double Labels::Target(std::size_t row, int k) const {
  if (mode_ == LabelMode::kSingleLabel) return class_ids_[row] == k ? 1.0 : 0.0;
  return indicators_(row, static_cast<std::size_t>(k));
}

Labels Labels::Subset(std::span<const std::size_t> rows) const {
  if (mode_ == LabelMode::kMultiLabel) return Multi(indicators_.SelectRows(rows));
  std::vector<int> ids;
  ids.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= class_ids_.size()) throw ArgumentError("label row out of range");
    ids.push_back(class_ids_[r]);
  }
  return Single(std::move(ids), num_classes_);
}

Matrix Labels::ToMatrix() const {
  if (mode_ == LabelMode::kMultiLabel) return indicators_;
  Matrix m(class_ids_.size(), 1);
  for (std::size_t i = 0; i < class_ids_.size(); ++i) m(i, 0) = class_ids_[i];
  return m;
}

Labels Labels::FromMatrix(const Matrix& m, LabelMode mode, int num_classes) {
  if (mode == LabelMode::kMultiLabel) {
    if (static_cast<int>(m.cols()) != num_classes) {
      throw FormatError("label matrix has " + std::to_string(m.cols()) +
                        " columns, manifest K = " + std::to_string(num_classes));
    }
    return Multi(m);
  }
  if (m.cols() != 1) throw FormatError("single-label payload must have 1 column");
  std::vector<int> ids(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double v = m(i, 0);
    if (v != std::floor(v) || !std::isfinite(v)) {
      throw ValidationError("non-integer class id at row " + std::to_string(i));
    }
    ids[i] = static_cast<int>(v);
  }
  return Single(std::move(ids), num_classes);
}

void Labels::Validate() const {
  if (num_classes_ < 2) throw ValidationError("need at least 2 classes");
  if (mode_ == LabelMode::kSingleLabel) {
    for (std::size_t i = 0; i < class_ids_.size(); ++i) {
      if (class_ids_[i] < 0 || class_ids_[i] >= num_classes_) {
        throw ValidationError("class id " + std::to_string(class_ids_[i]) +
                              " at row " + std::to_string(i) +
                              " outside [0, " + std::to_string(num_classes_) +
                              ")");
      }
    }
  } else {
    for (double v : indicators_.data()) {
      if (v != 0.0 && v != 1.0) {
        throw ValidationError("multi-label entries must be 0 or 1");
      }
    }
  }
}

// ------------------------------------------------------- EmbeddingDataset

void EmbeddingDataset::Validate() const {
  if (embeddings.rows() < 1) throw ValidationError("dataset has no rows");
  if (embeddings.cols() < 1) throw ValidationError("dataset has no columns");
  labels.Validate();
  if (labels.size() != embeddings.rows()) {
    throw ValidationError("label count " + std::to_string(labels.size()) +
                          " != row count " + std::to_string(embeddings.rows()));
  }
  if (static_cast<int>(class_names.size()) != labels.num_classes()) {
    throw ValidationError("class_names has " +
                          std::to_string(class_names.size()) + " entries, K = " +
                          std::to_string(labels.num_classes()));
  }
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    for (double v : embeddings.row(r)) {
      if (!std::isfinite(v)) {
        throw ValidationError("non-finite embedding value in row " +
                              std::to_string(r));
      }
    }
  }
}

EmbeddingDataset EmbeddingDataset::Subset(
    std::span<const std::size_t> rows) const {
  EmbeddingDataset out;
  out.embeddings = embeddings.SelectRows(rows);
  out.labels = labels.Subset(rows);
  out.class_names = class_names;
  out.provenance = provenance;
  return out;
}

// ------------------------------------------------------------------- I/O

DatasetManifest SaveDataset(const EmbeddingDataset& dataset,
                            const fs::path& dir) {
  dataset.Validate();
  fs::create_directories(dir);
  const Matrix label_matrix = dataset.labels.ToMatrix();
  const Emb1Info emb = WriteEmb1(dir / "embeddings.emb1", dataset.embeddings,
                                 LosslessDtype(dataset.embeddings));
  const Emb1Info lab =
      WriteEmb1(dir / "labels.emb1", label_matrix, LosslessDtype(label_matrix));

  DatasetManifest m;
  m.mode = dataset.mode();
  m.n = dataset.size();
  m.d = dataset.dim();
  m.k = static_cast<std::size_t>(dataset.num_classes());
  m.checksum = emb.payload_checksum;
  m.labels_checksum = lab.payload_checksum;
  m.provenance = dataset.provenance;
  m.class_names = dataset.class_names;

  json j = {{"schema_version", m.schema_version},
            {"mode", LabelModeName(m.mode)},
            {"n", m.n},
            {"d", m.d},
            {"K", m.k},
            {"checksum", ChecksumHex(m.checksum)},
            {"labels_checksum", ChecksumHex(m.labels_checksum)},
            {"provenance", m.provenance},
            {"class_names", m.class_names}};
  WriteJsonFile(dir / "manifest.json", j);
  return m;
}

DatasetManifest ReadDatasetManifest(const fs::path& dir) {
  const json j = ReadJsonFile(dir / "manifest.json");
  DatasetManifest m;
  try {
    m.schema_version = j.at("schema_version").get<std::string>();
    if (m.schema_version != kDatasetSchema) {
      throw FormatError("unsupported dataset schema '" + m.schema_version + "'");
    }
    m.mode = ParseLabelMode(j.at("mode").get<std::string>());
    m.n = j.at("n").get<std::size_t>();
    m.d = j.at("d").get<std::size_t>();
    m.k = j.at("K").get<std::size_t>();
    m.checksum = ParseChecksumHex(j.at("checksum").get<std::string>());
    m.labels_checksum =
        ParseChecksumHex(j.at("labels_checksum").get<std::string>());
    m.provenance = j.value("provenance", "");
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("bad dataset manifest in " + dir.string() + ": " +
                      e.what());
  }
  return m;
}

EmbeddingDataset LoadDataset(const fs::path& path) {
  if (fs::is_regular_file(path) && path.extension() == ".csv") {
    return LoadCsvDataset(path);
  }
  const DatasetManifest m = ReadDatasetManifest(path);
  Emb1Info emb_info, lab_info;
  Matrix embeddings = ReadEmb1(path / "embeddings.emb1", &emb_info);
  if (emb_info.rows != m.n || emb_info.cols != m.d) {
    throw FormatError("manifest says " + std::to_string(m.n) + "x" +
                      std::to_string(m.d) + " but payload is " +
                      std::to_string(emb_info.rows) + "x" +
                      std::to_string(emb_info.cols));
  }
  if (emb_info.payload_checksum != m.checksum) {
    throw IntegrityError("embeddings checksum " +
                         ChecksumHex(emb_info.payload_checksum) +
                         " does not match manifest " + ChecksumHex(m.checksum));
  }
  Matrix label_matrix = ReadEmb1(path / "labels.emb1", &lab_info);
  if (lab_info.rows != m.n) {
    throw FormatError("labels payload has " + std::to_string(lab_info.rows) +
                      " rows, manifest n = " + std::to_string(m.n));
  }
  if (lab_info.payload_checksum != m.labels_checksum) {
    throw IntegrityError("labels checksum does not match manifest");
  }
  EmbeddingDataset d;
  d.embeddings = std::move(embeddings);
  d.labels = Labels::FromMatrix(label_matrix, m.mode, static_cast<int>(m.k));
  d.class_names = m.class_names;
  d.provenance = m.provenance;
  d.Validate();
  return d;
}

namespace {

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = cell.find_first_not_of(' ');
    out.push_back(start == std::string::npos ? "" : cell.substr(start));
  }
  return out;
}

double ParseDouble(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("line " + std::to_string(line_no) + ": '" + s +
                      "' is not a number");
  }
  return v;
}

}  // namespace

EmbeddingDataset LoadCsvDataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV file");
  const auto header = SplitCsvLine(line);
  if (header.size() < 2 || header[0] != "label") {
    throw FormatError("CSV header must be 'label,<feature columns>'");
  }
  const std::size_t d = header.size() - 1;
  std::vector<double> values;
  std::vector<int> ids;
  std::vector<std::string> class_names;
  std::map<std::string, int> class_index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = SplitCsvLine(line);
    if (cells.size() != header.size()) {
      throw FormatError("line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size() - 1) + " features, header has " +
                        std::to_string(d));
    }
    auto [it, inserted] =
        class_index.emplace(cells[0], static_cast<int>(class_names.size()));
    if (inserted) class_names.push_back(cells[0]);
    ids.push_back(it->second);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      values.push_back(ParseDouble(cells[c], line_no));
    }
  }
  EmbeddingDataset ds;
  const std::size_t n = ids.size();
  ds.embeddings = Matrix(n, d, std::move(values));
  const int k = static_cast<int>(class_names.size());
  ds.labels = Labels::Single(std::move(ids), k);
  ds.class_names = std::move(class_names);
  ds.provenance = "csv:" + path.filename().string();
  ds.Validate();
  return ds;
}

// ----------------------------------------------------------------- Split

DatasetSplit SplitDataset(const EmbeddingDataset& dataset, double fraction,
                          std::uint64_t seed, bool stratified) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ArgumentError("split fraction must be in (0, 1)");
  }
  const std::size_t n = dataset.size();
  const auto target =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (target == 0 || target >= n) {
    throw ArgumentError("fraction " + std::to_string(fraction) + " of " +
                        std::to_string(n) + " rows leaves an empty split");
  }

  std::vector<std::size_t> first;
  if (stratified && dataset.mode() == LabelMode::kSingleLabel) {
    const int k = dataset.num_classes();
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < n; ++r) {
      by_class[static_cast<std::size_t>(dataset.labels.class_ids()[r])].push_back(r);
    }
    std::vector<std::size_t> quota(by_class.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      const double exact = fraction * static_cast<double>(by_class[c].size());
      quota[c] = static_cast<std::size_t>(std::floor(exact));
      assigned += quota[c];
      if (quota[c] < by_class[c].size()) remainders.emplace_back(exact - quota[c], c);
    }
    // Largest remainder first, lower class id on ties.
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i) {
      ++quota[remainders[i].second];
      ++assigned;
    }
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      Rng rng(DeriveSeed(seed, "split/class/" + std::to_string(c)));
      rng.Shuffle(std::span<std::size_t>(by_class[c]));
      first.insert(first.end(), by_class[c].begin(),
                   by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
  } else {
    Rng rng(DeriveSeed(seed, "split"));
    auto perm = rng.Permutation(n);
    first.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(target));
  }
  std::sort(first.begin(), first.end());
  std::vector<std::size_t> second;
  second.reserve(n - first.size());
  std::size_t j = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (j < first.size() && first[j] == r) {
      ++j;
    } else {
      second.push_back(r);
    }
  }
  DatasetSplit out;
  out.first = dataset.Subset(first);
  out.second = dataset.Subset(second);
  out.first_rows = std::move(first);
  out.second_rows = std::move(second);
  return out;
}

// ------------------------------------------------------ Concept examples

std::vector<ConceptExampleSet> SelectConceptExamples(
    const std::vector<ConceptAnnotation>& annotations, const EmbeddingDataset& dataset,
    std::size_t pairs_per_concept, std::uint64_t seed) {
  if (pairs_per_concept < 2) {
    throw ArgumentError("pairs_per_concept must be at least 2");
  }
  const std::size_t n = dataset.size();
  std::vector<ConceptExampleSet> out;
  std::set<std::string> seen;
  for (const ConceptAnnotation& a : annotations) {
    const std::string& name = a.concept_name;
    if (!seen.insert(name).second) {
      throw ValidationError("concept '" + name + "' annotated twice");
    }
    auto check_ids = [&](const std::vector<std::size_t>& raw) {
      std::vector<std::size_t> ids;
      std::set<std::size_t> uniq;
      for (std::size_t id : raw) {
        if (id >= n) {
          throw ValidationError("concept '" + name + "' references row " +
                                std::to_string(id) + " outside [0, " +
                                std::to_string(n) + ")");
        }
        if (uniq.insert(id).second) ids.push_back(id);
      }
      return ids;
    };
    std::vector<std::size_t> pos = check_ids(a.positives);
    std::set<std::size_t> pos_set(pos.begin(), pos.end());
    std::vector<std::size_t> neg;
    if (a.has_negatives) {
      neg = check_ids(a.negatives);
      for (std::size_t id : neg) {
        if (pos_set.count(id)) {
          throw ValidationError("concept '" + name + "': row " +
                                std::to_string(id) +
                                " is both positive and negative");
        }
      }
    } else {
      for (std::size_t r = 0; r < n; ++r) {
        if (!pos_set.count(r)) neg.push_back(r);
      }
    }
    if (pos.size() < pairs_per_concept || neg.size() < pairs_per_concept) {
      throw InsufficientExamplesError(
          name, "concept '" + name + "' has " + std::to_string(pos.size()) +
                    " positives and " + std::to_string(neg.size()) +
                    " negatives; " + std::to_string(pairs_per_concept) +
                    " of each required");
    }
    Rng pos_rng(DeriveSeed(seed, "positives/" + name));
    Rng neg_rng(DeriveSeed(seed, "negatives/" + name));
    pos_rng.Shuffle(std::span<std::size_t>(pos));
    neg_rng.Shuffle(std::span<std::size_t>(neg));
    pos.resize(pairs_per_concept);
    neg.resize(pairs_per_concept);

    ConceptExampleSet set;
    set.concept_name = name;
    set.positives = dataset.embeddings.SelectRows(pos);
    set.negatives = dataset.embeddings.SelectRows(neg);
    set.positive_rows = std::move(pos);
    set.negative_rows = std::move(neg);
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<ConceptAnnotation> ReadConceptAnnotations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::vector<ConceptAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const json rec = json::parse(line);
      if (!rec.contains("concept") || !rec.contains("positives")) {
        throw FormatError(where + ": record needs 'concept' and 'positives'");
      }
      ConceptAnnotation a;
      a.concept_name = rec["concept"].get<std::string>();
      auto read_ids = [&](const json& arr) {
        std::vector<std::size_t> ids;
        for (const auto& v : arr) {
          const auto id = v.get<std::int64_t>();
          if (id < 0) {
            throw ValidationError("concept '" + a.concept_name + "' references row " +
                                  std::to_string(id));
          }
          ids.push_back(static_cast<std::size_t>(id));
        }
        return ids;
      };
      a.positives = read_ids(rec["positives"]);
      if (rec.contains("negatives")) {
        a.has_negatives = true;
        a.negatives = read_ids(rec["negatives"]);
      }
      out.push_back(std::move(a));
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return out;
}

void WriteConceptAnnotations(const std::vector<ConceptAnnotation>& annotations,
                             const fs::path& path) {
  std::string text;
  for (const auto& a : annotations) {
    json rec = {{"concept", a.concept_name}, {"positives", a.positives}};
    if (a.has_negatives) rec["negatives"] = a.negatives;
    text += rec.dump() + "\n";
  }
  WriteFileBytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<ConceptExampleSet> LoadConceptExamples(
    const fs::path& path, const EmbeddingDataset& dataset,
    std::size_t pairs_per_concept, std::uint64_t seed) {
  return SelectConceptExamples(ReadConceptAnnotations(path), dataset, pairs_per_concept,
                               seed);
}

}  // namespace pcbm

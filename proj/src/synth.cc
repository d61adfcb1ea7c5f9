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

#include "pcbm/synth.h"

#include <cmath>
#include <algorithm>

#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "pcbm/random.h"

namespace pcbm {

namespace fs = std::filesystem;
using nlohmann::json;

Matrix SynthSpec::Probabilities() const {
  if (concept_class_probs.rows() == 0) {
    return Matrix(static_cast<std::size_t>(num_classes), num_concepts, 0.5);
  }
  return concept_class_probs;
}

void SynthSpec::Validate() const {
  if (num_classes < 2) throw ArgumentError("synth needs K >= 2");
  if (num_concepts < 1) throw ArgumentError("synth needs N_c >= 1");
  const std::size_t need = num_concepts + (hidden_offsets.empty() ? 0 : 1);
  if (d < need) {
    throw ArgumentError("d = " + std::to_string(d) + " is too small for " +
                        std::to_string(need) + " orthogonal directions");
  }
  if (n_train < 1 || n_test < 1) throw ArgumentError("synth row counts must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ArgumentError("noise_sigma must be finite and >= 0");
  }
  if (pairs_per_concept < 2) throw ArgumentError("pairs_per_concept must be >= 2");
  if (!std::isfinite(latent_baseline)) throw ArgumentError("latent_baseline must be finite");
  if (!hidden_offsets.empty() &&
      hidden_offsets.size() != static_cast<std::size_t>(num_classes)) {
    throw ArgumentError("hidden_offsets needs one entry per class");
  }
  if (concept_class_probs.rows() > 0) {
    if (concept_class_probs.rows() != static_cast<std::size_t>(num_classes) ||
        concept_class_probs.cols() != num_concepts) {
      throw ArgumentError("concept_class_probs must be K×N_c");
    }
    for (double p : concept_class_probs.data()) {
      if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("probabilities must be in [0, 1]");
    }
  }
}

json ToJson(const SynthSpec& spec) {
  const Matrix probs = spec.Probabilities();
  json rows = json::array();
  for (std::size_t k = 0; k < probs.rows(); ++k) {
    rows.push_back(std::vector<double>(probs.row(k).begin(), probs.row(k).end()));
  }
  return {{"d", spec.d},
          {"num_concepts", spec.num_concepts},
          {"num_classes", spec.num_classes},
          {"n_train", spec.n_train},
          {"n_test", spec.n_test},
          {"noise_sigma", spec.noise_sigma},
          {"concept_class_probs", rows},
          {"seed", spec.seed},
          {"latent_baseline", spec.latent_baseline},
          {"hidden_offsets", spec.hidden_offsets},
          {"pairs_per_concept", spec.pairs_per_concept}};
}

SynthSpec SynthSpecFromJson(const json& j) {
  SynthSpec s;
  try {
    s.d = j.value("d", s.d);
    s.num_concepts = j.value("num_concepts", s.num_concepts);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.n_train = j.value("n_train", s.n_train);
    s.n_test = j.value("n_test", s.n_test);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
    s.latent_baseline = j.value("latent_baseline", s.latent_baseline);
    s.hidden_offsets = j.value("hidden_offsets", s.hidden_offsets);
    s.pairs_per_concept = j.value("pairs_per_concept", s.pairs_per_concept);
    if (j.contains("concept_class_probs")) {
      std::vector<std::vector<double>> rows = j.at("concept_class_probs");
      if (!rows.empty()) s.concept_class_probs = Matrix::FromRows(rows);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad synth spec: ") + e.what());
  }
  s.Validate();
  return s;
}

Matrix OrthonormalRows(std::size_t rows, std::size_t d, std::uint64_t seed) {
  if (rows > d) throw ArgumentError("cannot fit more orthonormal rows than dimensions");
  Rng rng(seed);
  Matrix q(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    auto v = q.row(r);
    for (;;) {
      for (double& x : v) x = rng.Normal();
      // Two Gram-Schmidt passes keep orthogonality at round-off level.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t p = 0; p < r; ++p) {
          const auto u = q.row(p);
          const double dot = Dot(v, u);
          for (std::size_t j = 0; j < d; ++j) v[j] -= dot * u[j];
        }
      }
      const double norm = std::sqrt(SquaredNorm(v));
      if (norm > 1e-6) {
        for (double& x : v) x /= norm;
        break;
      }
    }
  }
  return q;
}

std::vector<std::string> SynthConceptNames(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) {
    names.push_back("concept_" + std::string(i < 10 ? "0" : "") + std::to_string(i));
  }
  return names;
}

std::vector<std::string> SynthClassNames(int k) {
  std::vector<std::string> names;
  for (int i = 0; i < k; ++i) names.push_back("class_" + std::to_string(i));
  return names;
}

namespace {

struct Directions {
  Matrix planted;
  std::vector<double> hidden;
};

Directions MakeDirections(const SynthSpec& spec) {
  const std::size_t extra = spec.hidden_offsets.empty() ? 0 : 1;
  const Matrix all = OrthonormalRows(spec.num_concepts + extra, spec.d,
                                     DeriveSeed(spec.seed, "synth/directions"));
  Directions dirs;
  dirs.planted = Matrix(spec.num_concepts, spec.d);
  for (std::size_t i = 0; i < spec.num_concepts; ++i) {
    std::copy(all.row(i).begin(), all.row(i).end(), dirs.planted.row(i).begin());
  }
  if (extra) {
    const auto h = all.row(spec.num_concepts);
    dirs.hidden.assign(h.begin(), h.end());
  }
  return dirs;
}

// Writes Gᵀ(z − β) + offset·h + noise into `out`.
void Embed(const SynthSpec& spec, const Directions& dirs, std::span<const double> z,
           double offset, Rng& rng, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double coef = z[i] - spec.latent_baseline;
    if (coef == 0.0) continue;
    const auto g = dirs.planted.row(i);
    for (std::size_t j = 0; j < spec.d; ++j) out[j] += coef * g[j];
  }
  if (offset != 0.0) {
    for (std::size_t j = 0; j < spec.d; ++j) out[j] += offset * dirs.hidden[j];
  }
  if (spec.noise_sigma > 0.0) {
    for (double& v : out) v += spec.noise_sigma * rng.Normal();
  }
}

struct Draw {
  EmbeddingDataset dataset;
  Matrix indicators;
};

// force_class < 0 disables forcing.
Draw DrawDomain(const SynthSpec& spec, const Directions& dirs, std::size_t n,
                std::string_view stream, int force_class, std::size_t force_concept,
                double force_value) {
  const Matrix probs = spec.Probabilities();
  Rng rng(DeriveSeed(spec.seed, stream));
  Draw d;
  d.indicators = Matrix(n, spec.num_concepts);
  d.dataset.embeddings = Matrix(n, spec.d);
  std::vector<int> ids(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int k = static_cast<int>(rng.Index(static_cast<std::uint64_t>(spec.num_classes)));
    ids[r] = k;
    auto z = d.indicators.row(r);
    for (std::size_t i = 0; i < spec.num_concepts; ++i) {
      z[i] = rng.Bernoulli(probs(static_cast<std::size_t>(k), i)) ? 1.0 : 0.0;
    }
    if (k == force_class) z[force_concept] = force_value;
    const double offset =
        spec.hidden_offsets.empty() ? 0.0 : spec.hidden_offsets[static_cast<std::size_t>(k)];
    Embed(spec, dirs, z, offset, rng, d.dataset.embeddings.row(r));
  }
  d.dataset.labels = Labels::Single(std::move(ids), spec.num_classes);
  d.dataset.class_names = SynthClassNames(spec.num_classes);
  d.dataset.provenance = "synth seed=" + std::to_string(spec.seed);
  return d;
}

struct Probes {
  EmbeddingDataset dataset;
  std::vector<ConceptAnnotation> annotations;
  std::vector<ConceptExampleSet> examples;
};

Probes DrawProbes(const SynthSpec& spec, const Directions& dirs,
                  const std::vector<std::string>& names) {
  const std::size_t m = spec.pairs_per_concept;
  const std::size_t n = 2 * m * spec.num_concepts;
  Rng rng(DeriveSeed(spec.seed, "synth/probes"));
  Probes p;
  p.dataset.embeddings = Matrix(n, spec.d);
  std::vector<int> ids(n);
  std::vector<double> z(spec.num_concepts);
  std::size_t r = 0;
  for (std::size_t c = 0; c < spec.num_concepts; ++c) {
    ConceptAnnotation a;
    a.concept_name = names[c];
    a.has_negatives = true;
    for (std::size_t t = 0; t < 2 * m; ++t, ++r) {
      for (std::size_t i = 0; i < spec.num_concepts; ++i) z[i] = rng.Bernoulli(0.5) ? 1.0 : 0.0;
      const bool positive = t < m;
      z[c] = positive ? 1.0 : 0.0;
      auto row = p.dataset.embeddings.row(r);
      Embed(spec, dirs, z, 0.0, rng, row);
      ids[r] = static_cast<int>(c);
      (positive ? a.positives : a.negatives).push_back(r);
    }
    p.annotations.push_back(std::move(a));
  }
  // A lone concept still needs a two-class label space.
  const int k = std::max<int>(2, static_cast<int>(spec.num_concepts));
  p.dataset.labels = Labels::Single(std::move(ids), k);
  p.dataset.class_names = names;
  if (spec.num_concepts < 2) p.dataset.class_names.push_back("none");
  p.dataset.provenance = "synth probes seed=" + std::to_string(spec.seed);
  // Same selection a reload from disk performs, so both paths agree.
  p.examples = SelectConceptExamples(p.annotations, p.dataset, m, 0);
  return p;
}

}  // namespace

SynthData GenerateDataset(const SynthSpec& spec) {
  spec.Validate();
  const Directions dirs = MakeDirections(spec);
  SynthData out;
  out.concept_names = SynthConceptNames(spec.num_concepts);
  Draw d = DrawDomain(spec, dirs, spec.n_train, "synth/train", -1, 0, 0.0);
  out.dataset = std::move(d.dataset);
  out.indicators = std::move(d.indicators);
  Probes p = DrawProbes(spec, dirs, out.concept_names);
  out.probes = std::move(p.dataset);
  out.concept_examples = std::move(p.examples);
  out.planted_directions = dirs.planted;
  out.hidden_direction = dirs.hidden;
  return out;
}

namespace {

ShiftScenario Generate(const SynthSpec& spec, int shifted_class, std::size_t spurious,
                       bool force) {
  spec.Validate();
  if (shifted_class < 0 || shifted_class >= spec.num_classes) {
    throw ArgumentError("shifted_class " + std::to_string(shifted_class) + " out of range");
  }
  if (spurious >= spec.num_concepts) {
    throw ArgumentError("spurious_concept " + std::to_string(spurious) + " out of range");
  }
  const Directions dirs = MakeDirections(spec);
  ShiftScenario s;
  s.spec = spec;
  s.shifted_class = shifted_class;
  s.spurious_concept = spurious;
  s.concept_names = SynthConceptNames(spec.num_concepts);
  const int fc = force ? shifted_class : -1;
  Draw train = DrawDomain(spec, dirs, spec.n_train, "synth/train", fc, spurious, 1.0);
  Draw test = DrawDomain(spec, dirs, spec.n_test, "synth/test", fc, spurious, 0.0);
  train.dataset.provenance += " domain=train";
  test.dataset.provenance += " domain=test";
  s.train = std::move(train.dataset);
  s.train_indicators = std::move(train.indicators);
  s.test = std::move(test.dataset);
  s.test_indicators = std::move(test.indicators);
  Probes p = DrawProbes(spec, dirs, s.concept_names);
  s.probes = std::move(p.dataset);
  s.concept_examples = std::move(p.examples);
  s.planted_directions = dirs.planted;
  s.hidden_direction = dirs.hidden;
  return s;
}

}  // namespace

ShiftScenario GenerateShiftScenario(const SynthSpec& spec, int shifted_class,
                                    std::size_t spurious_concept) {
  return Generate(spec, shifted_class, spurious_concept, true);
}

ShiftScenario GenerateTwoDomainScenario(const SynthSpec& spec) {
  return Generate(spec, 0, 0, false);
}

namespace {

// Places canonical class/concept roles at seeded positions.
Matrix PermuteProfile(const Matrix& canonical, const std::vector<std::size_t>& class_of,
                      const std::vector<std::size_t>& concept_of) {
  Matrix out(canonical.rows(), canonical.cols());
  for (std::size_t k = 0; k < canonical.rows(); ++k) {
    for (std::size_t i = 0; i < canonical.cols(); ++i) {
      out(class_of[k], concept_of[i]) = canonical(k, i);
    }
  }
  return out;
}

}  // namespace

ShiftSetup DefaultShiftSetup(std::uint64_t seed) {
  // Canonical roles: class 0 is shifted, class 1 its confuser; concept 7 is
  // spurious, 0 and 1 are the shared core, 2 and 3 the distinctive concepts.
  Matrix probs(5, 8, 0.05);
  for (std::size_t k = 0; k < 5; ++k) {
    probs(k, 7) = 0.2;
    probs(k, 2) = 0.0;
  }
  probs(0, 0) = probs(0, 1) = 0.8;
  probs(1, 0) = probs(1, 1) = 0.8;
  probs(0, 2) = 0.6;
  probs(1, 3) = 0.9;
  probs(2, 3) = probs(2, 4) = 0.9;
  probs(3, 4) = probs(3, 5) = 0.9;
  probs(4, 5) = probs(4, 6) = 0.9;

  Rng rng(DeriveSeed(seed, "synth/roles"));
  const auto class_of = rng.Permutation(5);
  const auto concept_of = rng.Permutation(8);

  ShiftSetup setup;
  setup.spec.seed = seed;
  setup.spec.latent_baseline = 0.5;
  setup.spec.concept_class_probs = PermuteProfile(probs, class_of, concept_of);
  setup.shifted_class = static_cast<int>(class_of[0]);
  setup.confuser_class = static_cast<int>(class_of[1]);
  setup.spurious_concept = concept_of[7];
  return setup;
}

SynthSpec HiddenSignalSpec(std::uint64_t seed) {
  Matrix probs(5, 8, 0.05);
  for (std::size_t i : {0, 1, 2}) probs(0, i) = probs(1, i) = probs(2, i) = 0.9;
  for (std::size_t i : {3, 4, 5}) probs(3, i) = 0.9;
  for (std::size_t i : {5, 6, 7}) probs(4, i) = 0.9;
  std::vector<double> offsets = {1.0, 0.0, -1.0, 0.0, 0.0};

  Rng rng(DeriveSeed(seed, "synth/roles"));
  const auto class_of = rng.Permutation(5);
  const auto concept_of = rng.Permutation(8);

  SynthSpec spec;
  spec.seed = seed;
  spec.latent_baseline = 0.5;
  spec.concept_class_probs = PermuteProfile(probs, class_of, concept_of);
  spec.hidden_offsets.assign(5, 0.0);
  for (std::size_t k = 0; k < 5; ++k) spec.hidden_offsets[class_of[k]] = offsets[k];
  return spec;
}

// ---------------------------------------------------------------- I/O

namespace {

constexpr char kScenarioSchema[] = "pcbm.scenario/1";

}  // namespace

void SaveScenario(const ShiftScenario& s, const fs::path& dir) {
  fs::create_directories(dir);
  SaveDataset(s.train, dir / "train");
  SaveDataset(s.test, dir / "test");
  SaveDataset(s.probes, dir / "probes");
  {
    std::vector<ConceptAnnotation> annotations;
    // Probe rows are stored in generation (ascending) order so a reload
    // runs the same seeded selection.
    for (const auto& ex : s.concept_examples) {
      ConceptAnnotation a{ex.concept_name, ex.positive_rows, ex.negative_rows, true};
      std::sort(a.positives.begin(), a.positives.end());
      std::sort(a.negatives.begin(), a.negatives.end());
      annotations.push_back(std::move(a));
    }
    WriteConceptAnnotations(annotations, dir / "probes.jsonl");
  }
  const Emb1Info dir_info = WriteEmb1(dir / "directions.emb1", s.planted_directions,
                                      Dtype::kFloat64);
  const Emb1Info train_z = WriteEmb1(dir / "train_indicators.emb1", s.train_indicators,
                                     Dtype::kFloat32);
  const Emb1Info test_z = WriteEmb1(dir / "test_indicators.emb1", s.test_indicators,
                                    Dtype::kFloat32);
  WriteJsonFile(dir / "scenario.json",
                {{"schema_version", kScenarioSchema},
                 {"spec", ToJson(s.spec)},
                 {"shifted_class", s.shifted_class},
                 {"spurious_concept", s.spurious_concept},
                 {"concept_names", s.concept_names},
                 {"hidden_direction", s.hidden_direction},
                 {"checksums",
                  {{"directions.emb1", ChecksumHex(dir_info.payload_checksum)},
                   {"train_indicators.emb1", ChecksumHex(train_z.payload_checksum)},
                   {"test_indicators.emb1", ChecksumHex(test_z.payload_checksum)}}}});
}

ShiftScenario LoadScenario(const fs::path& dir) {
  const json meta = ReadJsonFile(dir / "scenario.json");
  if (meta.value("schema_version", "") != kScenarioSchema) {
    throw FormatError("unsupported scenario schema in " + dir.string());
  }
  ShiftScenario s;
  auto checked = [&](const std::string& file) {
    Emb1Info info;
    Matrix m = ReadEmb1(dir / file, &info);
    if (meta.at("checksums").value(file, "") != ChecksumHex(info.payload_checksum)) {
      throw IntegrityError(file + " checksum does not match scenario.json");
    }
    return m;
  };
  try {
    s.spec = SynthSpecFromJson(meta.at("spec"));
    s.shifted_class = meta.at("shifted_class").get<int>();
    s.spurious_concept = meta.at("spurious_concept").get<std::size_t>();
    s.concept_names = meta.at("concept_names").get<std::vector<std::string>>();
    s.hidden_direction = meta.at("hidden_direction").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad scenario.json: ") + e.what());
  }
  s.train = LoadDataset(dir / "train");
  s.test = LoadDataset(dir / "test");
  s.probes = LoadDataset(dir / "probes");
  s.planted_directions = checked("directions.emb1");
  s.train_indicators = checked("train_indicators.emb1");
  s.test_indicators = checked("test_indicators.emb1");
  s.concept_examples =
      LoadConceptExamples(dir / "probes.jsonl", s.probes, s.spec.pairs_per_concept, 0);
  return s;
}

}  // namespace pcbm

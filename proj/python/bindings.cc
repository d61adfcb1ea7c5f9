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

// Python bindings: EMB1 and named-vector I/O for the embedding exporter,
// dataset directories, projection, ranking metrics and the CLI entry point.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "pcbm/cli.h"
#include "pcbm/concept_bank.h"
#include "pcbm/dataset.h"
#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "pcbm/metrics.h"

namespace py = pybind11;
namespace fs = std::filesystem;

namespace pcbm {
namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix ToMatrix(const Array& a) {
  if (a.ndim() != 2) throw ArgumentError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array ToArray(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

std::vector<double> ToVector(const Array& a) {
  if (a.ndim() != 1) throw ArgumentError("expected a 1-D array");
  return {a.data(), a.data() + a.shape(0)};
}

Dtype ParseDtype(const std::string& s) {
  if (s == "float32") return Dtype::kFloat32;
  if (s == "float64") return Dtype::kFloat64;
  throw ArgumentError("dtype must be float32 or float64, got " + s);
}

py::dict Emb1InfoDict(const Emb1Info& info) {
  py::dict d;
  d["rows"] = info.rows;
  d["cols"] = info.cols;
  d["dtype"] = info.dtype == Dtype::kFloat32 ? "float32" : "float64";
  d["checksum"] = ChecksumHex(info.payload_checksum);
  return d;
}

}  // namespace
}  // namespace pcbm

PYBIND11_MODULE(_pcbm, m) {
  using namespace pcbm;
  m.doc() = "Post-hoc concept bottleneck toolkit";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", base.ptr());

  m.def("fnv1a64", [](py::bytes data) {
    const std::string s = data;
    return Fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }, py::arg("data"));

  m.def("write_emb1", [](const fs::path& path, const Array& a, const std::string& dtype) {
    return Emb1InfoDict(WriteEmb1(path, ToMatrix(a), ParseDtype(dtype)));
  }, py::arg("path"), py::arg("array"), py::arg("dtype") = "float32",
  "Writes a 2-D array; returns rows, cols, dtype and the payload checksum.");

  m.def("read_emb1", [](const fs::path& path) {
    Emb1Info info;
    const Matrix mat = ReadEmb1(path, &info);
    return py::make_tuple(ToArray(mat), Emb1InfoDict(info));
  }, py::arg("path"), "Returns (float64 array, info dict).");

  m.def("save_named_vectors", [](const fs::path& dir, const std::vector<std::string>& names,
                                 const Array& vectors) {
    const Matrix mat = ToMatrix(vectors);
    if (mat.rows() != names.size()) throw ArgumentError("one name per row required");
    std::vector<NamedVector> v;
    for (std::size_t i = 0; i < names.size(); ++i) {
      v.emplace_back(names[i], std::vector<double>(mat.row(i).begin(), mat.row(i).end()));
    }
    SaveNamedVectors(v, dir);
  }, py::arg("dir"), py::arg("names"), py::arg("vectors"));

  m.def("load_named_vectors", [](const fs::path& dir) {
    const auto v = LoadNamedVectors(dir);
    std::vector<std::string> names;
    Matrix mat(v.size(), v.empty() ? 0 : v[0].second.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      names.push_back(v[i].first);
      std::copy(v[i].second.begin(), v[i].second.end(), mat.row(i).begin());
    }
    return py::make_tuple(names, ToArray(mat));
  }, py::arg("dir"));

  m.def("save_dataset", [](const fs::path& dir, const Array& embeddings, std::vector<int> labels,
                           std::vector<std::string> class_names, const std::string& provenance) {
    EmbeddingDataset ds;
    ds.embeddings = ToMatrix(embeddings);
    const int k = static_cast<int>(class_names.size());
    ds.labels = Labels::Single(std::move(labels), k);
    ds.class_names = std::move(class_names);
    ds.provenance = provenance;
    const DatasetManifest man = SaveDataset(ds, dir);
    return ChecksumHex(man.checksum);
  }, py::arg("dir"), py::arg("embeddings"), py::arg("labels"), py::arg("class_names"),
  py::arg("provenance") = "", "Writes a single-label dataset directory; returns the embeddings checksum.");

  m.def("load_dataset", [](const fs::path& path) {
    const EmbeddingDataset ds = LoadDataset(path);
    py::dict d;
    d["embeddings"] = ToArray(ds.embeddings);
    d["labels"] = ToArray(ds.labels.ToMatrix());
    d["class_names"] = ds.class_names;
    d["provenance"] = ds.provenance;
    d["mode"] = LabelModeName(ds.mode());
    return d;
  }, py::arg("path"));

  m.def("project", [](const fs::path& bank_dir, const Array& embeddings) {
    return ToArray(Project(LoadConceptBank(bank_dir), ToMatrix(embeddings)));
  }, py::arg("bank_dir"), py::arg("embeddings"),
  "Concept projections <x, c_i> / ||c_i||^2 against a saved concept bank.");

  m.def("auroc", [](const Array& scores, const std::vector<int>& labels) {
    return Auroc(ToVector(scores), labels);
  }, py::arg("scores"), py::arg("labels"));

  m.def("average_precision", [](const Array& scores, const std::vector<int>& labels) {
    return AveragePrecision(ToVector(scores), labels);
  }, py::arg("scores"), py::arg("labels"));

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = RunCli(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs the pcbm command line; returns (exit code, stdout, stderr).");
}

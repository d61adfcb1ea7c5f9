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

#ifndef PCBM_ERRORS_H_
#define PCBM_ERRORS_H_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pcbm {

// Root of the toolkit's exception hierarchy. `code()` is a stable
// machine-readable tag used by the CLI and the HTTP error bodies.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& m) : Error("argument_error", m) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& m) : Error("format_error", m) {}
};

class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& m) : Error("integrity_error", m) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& m)
      : Error("validation_error", m) {}
};

class InsufficientExamplesError : public Error {
 public:
  InsufficientExamplesError(std::string concept_name, const std::string& m)
      : Error("insufficient_examples", m), concept_(std::move(concept_name)) {}
  const std::string& concept_name() const { return concept_; }

 private:
  std::string concept_;
};

class DegenerateConceptError : public Error {
 public:
  explicit DegenerateConceptError(const std::string& m)
      : Error("degenerate_concept", m) {}
};

class RetrievalError : public Error {
 public:
  // status == 0 means the request never produced an HTTP response.
  RetrievalError(int status, const std::string& m)
      : Error("retrieval_error", m), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& m) : Error("training_error", m) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t step, const std::string& m)
      : Error("divergence_error", m), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

class FrozenBottleneckError : public Error {
 public:
  explicit FrozenBottleneckError(const std::string& m)
      : Error("frozen_bottleneck_violation", m) {}
};

class NormalizationUndefinedError : public Error {
 public:
  explicit NormalizationUndefinedError(const std::string& m)
      : Error("normalization_undefined", m) {}
};

class UndefinedMetricError : public Error {
 public:
  explicit UndefinedMetricError(const std::string& m)
      : Error("undefined_metric", m) {}
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& m) : Error("not_found", m) {}
};

class ConflictError : public Error {
 public:
  explicit ConflictError(const std::string& m) : Error("conflict", m) {}
};

}  // namespace pcbm

#endif  // PCBM_ERRORS_H_

// Copyright 2026 The drscreen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drscreen/domain.hpp"
#include "drscreen/features.hpp"
#include "drscreen/matrix.hpp"

namespace drscreen {

enum class KernelKind { Linear, Rbf };

std::string_view kernel_name(KernelKind k) noexcept;  // "linear" / "rbf"
KernelKind kernel_from_name(std::string_view name);

struct Kernel {
  KernelKind kind = KernelKind::Rbf;
  double gamma = 1.0;  // RBF only, > 0

  void validate() const;
  friend bool operator==(const Kernel&, const Kernel&) = default;
};

/// LINEAR: <x, y>. RBF: exp(-gamma * |x - y|^2). Throws on size mismatch.
double kernel_eval(const Kernel& k, std::span<const double> x, std::span<const double> y);

/// RBF gamma as configured: a fixed value or the "scale" heuristic
/// 1 / (d * var(X)) over every entry of the training matrix.
struct GammaSetting {
  bool scale = true;
  double value = 0.0;

  static GammaSetting auto_scale() { return {true, 0.0}; }
  static GammaSetting fixed(double v) { return {false, v}; }

  double resolve(const Matrix& x) const;
  std::string to_string() const;
  static GammaSetting parse(std::string_view text);

  friend bool operator==(const GammaSetting&, const GammaSetting&) = default;
};

struct TrainConfig {
  double C = 1.0;
  KernelKind kernel = KernelKind::Rbf;
  GammaSetting gamma = GammaSetting::auto_scale();
  double tol = 1e-6;    // KKT tolerance: stop when the maximal violating pair gap < tol
  int max_passes = 1000;  // iteration cap = max_passes * n
  std::uint64_t seed = 42;

  void validate() const;
};

/// Two-class soft-margin machine: f(x) = sum_i coef_i K(sv_i, x) + bias.
struct BinarySvm {
  Matrix support_vectors;
  std::vector<double> dual_coefs;  // alpha_i * y_i
  double bias = 0.0;
  Kernel kernel;
  double C = 1.0;
};

/// Full solver output, for diagnostics and tests.
struct SmoSolution {
  BinarySvm machine;
  std::vector<double> alpha;  // one per training row
  long long iterations = 0;
  bool converged = false;
  double max_violation = 0.0;  // final maximal violating pair gap
  double objective = 0.0;      // sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij
};

/// SMO on the soft-margin dual. Labels must be -1 / +1 with both present.
///
/// Working pair: i is the maximal KKT violator, j maximizes |E_i - E_j| among
/// partners that violate with i. When that pair cannot move (eta <= 1e-12 or
/// an empty step) the other violating partners are tried in a seeded random
/// order.
SmoSolution smo_solve(const Matrix& x, std::span<const int> y, const Kernel& kernel,
                      const TrainConfig& config);
BinarySvm smo_train_binary(const Matrix& x, std::span<const int> y, const Kernel& kernel,
                           const TrainConfig& config);

double decision(const BinarySvm& machine, std::span<const double> x);
/// sign(f(x)) with f = 0 mapping to +1.
int classify_binary(const BinarySvm& machine, std::span<const double> x);

/// Pairwise machine: +1 means `positive` (the more severe grade).
struct PairwiseMachine {
  DrGrade negative = DrGrade::NoDr;
  DrGrade positive = DrGrade::Mild;
  BinarySvm svm;
};

inline constexpr int kModelSchemaVersion = 1;

struct SvmModel {
  int schema_version = kModelSchemaVersion;
  std::vector<DrGrade> classes;            // ascending
  std::vector<PairwiseMachine> machines;   // (classes[a], classes[b]) for a < b, row-major
  PreprocessParams preprocess;
  LesionSet feature_classes = LesionSet::all();  // count columns the model reads
  bool confidence_weighted = false;        // counts sum confidences instead of 1s
  TrainConfig config;                      // hyperparameters used
  double resolved_gamma = 0.0;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t feature_dim() const noexcept;
};

/// One-vs-one training on already preprocessed rows. Grades without samples
/// are left out (reported through `warnings`).
SvmModel train_multiclass(const Matrix& x, std::span<const DrGrade> grades,
                          const TrainConfig& config, std::vector<std::string>* warnings = nullptr);

struct Prediction {
  DrGrade grade = DrGrade::NoDr;
  std::array<int, kGradeCount> votes{};
  std::array<double, kGradeCount> scores{};  // summed |f| of the votes won
};

/// Winner among `candidates`: most votes, then larger score, then the more
/// severe grade.
DrGrade resolve_votes(std::span<const DrGrade> candidates,
                      const std::array<int, kGradeCount>& votes,
                      const std::array<double, kGradeCount>& scores);

/// One-vs-one vote on an already preprocessed vector.
Prediction predict(const SvmModel& model, std::span<const double> x);
/// Applies the model's preprocessing to raw counts, then predicts.
Prediction classify_counts(const SvmModel& model, std::span<const double> counts);

}  // namespace drscreen

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

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drscreen/domain.hpp"
#include "drscreen/matrix.hpp"

namespace drscreen {

inline constexpr double kDefaultVarianceFloor = 1e-12;

/// Lesion counts of one image, one value per active class in id order.
struct FeatureVector {
  std::string image_id;
  std::vector<double> values;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Counts detections per active class. In weighted mode each detection adds
/// its confidence instead of 1. Detections of inactive classes are skipped
/// and reported through `warnings` when given.
FeatureVector extract_counts(std::string image_id, std::span<const Detection> detections,
                             const LesionSet& class_subset, bool confidence_weighted = false,
                             std::vector<std::string>* warnings = nullptr);

// ---- scaling ----

struct ScalerParams {
  std::vector<double> means;
  std::vector<double> stds;  // population std, floored at the variance floor
};

/// Needs at least two rows.
ScalerParams fit_scaler(const Matrix& x, double variance_floor = kDefaultVarianceFloor);
std::vector<double> apply_scaler(std::span<const double> v, const ScalerParams& params);

// ---- feature selection ----

/// One-way ANOVA F statistic of each column across label groups. Columns
/// with no variance score 0; columns with between-group but no within-group
/// variance score +infinity.
std::vector<double> anova_f_scores(const Matrix& x, std::span<const int> labels);

/// Indices (ascending) of the k columns with the highest F score; ties go to
/// the lower index. Needs 1 <= k <= cols and two distinct labels.
std::vector<std::size_t> select_features(const Matrix& x, std::span<const int> labels,
                                         std::size_t k);

// ---- PCA ----

struct PcaTarget {
  std::size_t components = 0;    // used when > 0
  double variance_ratio = 0.0;   // otherwise: smallest k reaching this ratio
};

struct PcaParams {
  Matrix components;                  // k x d, orthonormal rows
  std::vector<double> means;          // d
  std::vector<double> explained_variance_ratio;  // k, non-increasing
};

/// Top eigenvectors of the covariance of the centered rows, sorted by
/// eigenvalue descending; each is signed so its largest-magnitude entry is
/// positive.
PcaParams fit_pca(const Matrix& x, const PcaTarget& target);
std::vector<double> apply_pca(std::span<const double> v, const PcaParams& params);
/// Maps a projection back to input space (means added back).
std::vector<double> inverse_pca(std::span<const double> z, const PcaParams& params);

// ---- the full chain: select -> scale -> PCA ----

struct PreprocessConfig {
  std::size_t select_k = 0;  // 0 keeps every feature
  bool scale = true;
  PcaTarget pca;             // both fields 0 disables PCA
  double variance_floor = kDefaultVarianceFloor;

  bool pca_enabled() const noexcept { return pca.components > 0 || pca.variance_ratio > 0.0; }
};

struct PreprocessParams {
  std::size_t input_dim = 0;
  std::vector<std::size_t> selected_indices;
  std::optional<ScalerParams> scaler;
  std::optional<PcaParams> pca;
  double variance_floor = kDefaultVarianceFloor;

  std::size_t output_dim() const noexcept;
};

/// Fits every enabled stage on `x` (training rows only).
PreprocessParams fit_preprocess(const Matrix& x, std::span<const int> labels,
                                const PreprocessConfig& config);
std::vector<double> apply_preprocess(std::span<const double> v, const PreprocessParams& params);
Matrix apply_preprocess(const Matrix& x, const PreprocessParams& params);

nlohmann::json to_json(const PreprocessParams& params);
/// Throws LoadError naming the offending field.
PreprocessParams preprocess_from_json(const nlohmann::json& j);

}  // namespace drscreen

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
#include <map>
#include <string>

#include <opencv2/core.hpp>

#include "drscreen/dataset_io.hpp"
#include "drscreen/rng.hpp"

namespace drscreen {

using LesionCounts = std::array<int, kLesionClassCount>;

/// Rule-based synthetic fundus dataset.
///
/// Lesion counts per grade:
///   NO_DR             nothing
///   MILD              1-5 MA
///   MODERATE          3-10 MA, 1-5 HEM, 0-5 HE+SE
///   SEVERE            3-10 MA, 5-10 HEM, 0-5 HE+SE, 1-4 IRMA+VB
///   PROLIFERATIVE_DR  one of the patterns above plus 1-3 PROLIFERATIVE
/// Lesions are filled ellipses of a class-specific colour, placed without
/// overlap inside a dark circular disc.
struct SyntheticOptions {
  int n_per_grade = 20;
  int image_size = 256;
  std::uint64_t seed = 42;
  /// Probability that a record's grade is replaced by a different grade
  /// (annotations untouched). Models noisy labels; 0 keeps the rule exact.
  double label_noise = 0.0;
  int max_placement_retries = 500;
};

struct SyntheticDataset {
  Dataset dataset;                      // image_dir empty until written
  std::map<std::string, cv::Mat> images;  // BGR, 8-bit
};

SyntheticDataset generate_synthetic_dataset(const SyntheticOptions& options);

/// Draws lesion counts for `grade` following the rule table.
LesionCounts synthetic_lesion_counts(DrGrade grade, Rng& rng);

/// Inverse of the rule table: the grade implied by a set of counts.
DrGrade grade_from_lesion_counts(const LesionCounts& counts) noexcept;

/// Writes images/, labels/ (5-field), labels.csv and manifest.json under
/// `out_dir`. Returns the manifest path.
fs::path write_synthetic_dataset(const SyntheticDataset& synthetic, const fs::path& out_dir);

/// Lossless PNG encode with fixed parameters.
void write_png(const cv::Mat& image, const fs::path& path);

}  // namespace drscreen

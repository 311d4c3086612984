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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drscreen/dataset_io.hpp"
#include "drscreen/detector.hpp"
#include "drscreen/deteval.hpp"
#include "drscreen/features.hpp"
#include "drscreen/svm.hpp"

namespace drscreen {

// ---- count table (`image_id,ma,hem,he,se,irma,vb,prolif,grade`) ----

/// One image in numerical form. All seven class columns are always present;
/// classes outside the active subset hold 0.
struct CountRow {
  std::string image_id;
  std::array<double, kLesionClassCount> counts{};
  DrGrade grade = DrGrade::NoDr;

  friend bool operator==(const CountRow&, const CountRow&) = default;
};

inline constexpr std::string_view kCountTableHeader = "image_id,ma,hem,he,se,irma,vb,prolif,grade";

/// Values are written in shortest round-trip form (integers without a
/// fractional part).
std::string format_count_table(std::span<const CountRow> rows);
/// Throws LoadError("<source>:<line>: ...").
std::vector<CountRow> parse_count_table(std::string_view text, std::string_view source);
void write_count_table(std::span<const CountRow> rows, const fs::path& path);
std::vector<CountRow> read_count_table(const fs::path& path);

CountRow make_count_row(std::string image_id, std::span<const Detection> detections,
                        DrGrade grade, const LesionSet& class_subset, bool confidence_weighted,
                        std::vector<std::string>* warnings = nullptr);
/// The columns of `classes`, in id order.
Matrix feature_matrix(std::span<const CountRow> rows, const LesionSet& classes);
std::vector<DrGrade> grades_of(std::span<const CountRow> rows);

// ---- classification metrics ----

/// Rows are truth, columns predictions. Macro averages are unweighted means
/// over the grades present in truth. The referable view collapses grades
/// into NO (< MODERATE) and YES (>= MODERATE); positive class YES.
struct ClassificationReport {
  std::array<std::array<long long, kGradeCount>, kGradeCount> confusion{};
  long long total = 0;
  double accuracy = 0.0;
  std::array<PrfScores, kGradeCount> per_class{};
  std::array<bool, kGradeCount> present{};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;

  std::array<std::array<long long, 2>, 2> referable_confusion{};
  double referable_accuracy = 0.0;
  PrfScores referable;
};

ClassificationReport classification_report(std::span<const DrGrade> truth,
                                           std::span<const DrGrade> predicted);
/// Predicts every row of raw count features (model preprocessing applied)
/// and scores them. Throws DomainError on an empty set.
ClassificationReport evaluate(const SvmModel& model, const Matrix& features,
                              std::span<const DrGrade> truth);

/// `split` names the evaluated partition in the output ("train", "test").
nlohmann::json to_json(const ClassificationReport& report, std::string_view split);
std::string to_text(const ClassificationReport& report, std::string_view split);

// ---- hyperparameter search ----

struct SvmGrid {
  std::vector<double> C{0.1, 1.0, 10.0, 100.0};
  std::vector<GammaSetting> gamma{GammaSetting::auto_scale(), GammaSetting::fixed(0.01),
                                  GammaSetting::fixed(0.1), GammaSetting::fixed(1.0)};
  std::vector<KernelKind> kernels{KernelKind::Rbf};

  void validate() const;
};

struct GridPoint {
  KernelKind kernel = KernelKind::Rbf;
  double C = 1.0;
  GammaSetting gamma;
  double resolved_gamma = 0.0;  // gamma resolved on the search data; 0 for LINEAR
};

/// Grid points in listing order: kernels, then C, then gamma. A LINEAR kernel
/// contributes one point per C.
std::vector<GridPoint> expand_grid(const SvmGrid& grid, const Matrix& x);

struct CvRow {
  GridPoint point;
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
};

struct GridSearchResult {
  std::size_t best_index = 0;
  std::vector<CvRow> table;

  const GridPoint& best() const { return table.at(best_index).point; }
};

/// Fold index per row. Each grade is shuffled and dealt round-robin, so every
/// fold holds floor or ceil of n_c / k rows of grade c. Throws DomainError
/// when k exceeds the smallest grade count.
std::vector<int> stratified_folds(std::span<const DrGrade> labels, int k, std::uint64_t seed);

/// Stratified k-fold accuracy of every grid point on `x`. The winner has the
/// highest mean accuracy; ties go to the smaller C, then the smaller resolved
/// gamma, then the first listed.
GridSearchResult grid_search(const Matrix& x, std::span<const DrGrade> y, const SvmGrid& grid,
                             int cv_folds, std::uint64_t seed, const TrainConfig& base);

std::string format_cv_table(const GridSearchResult& result);

// ---- runs ----

struct RunConfig {
  fs::path dataset;  // manifest (file, directory, or path without ".json")
  DetectorConfig detector;
  PreprocessConfig preprocess;
  SplitSpec split;
  SvmGrid grid;
  int cv_folds = 5;
  std::uint64_t seed = 42;
  fs::path output_dir;
  bool confidence_weighted = false;
  double iou_threshold = kDefaultIouThreshold;
  double tol = 1e-6;
  int max_passes = 1000;
  bool timestamps = true;

  void validate() const;
};

/// Missing keys keep their defaults. Relative paths resolve against `base`.
/// The split seed defaults to the run seed.
RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base = {});
nlohmann::json to_json(const RunConfig& config);
RunConfig load_run_config(const fs::path& path);

struct RunResult {
  SvmModel model;
  ClassificationReport train_report;
  ClassificationReport test_report;
  GridSearchResult grid;
  std::optional<DetectionReport> detection_report;
  std::vector<CountRow> counts;
  std::vector<std::string> warnings;
  fs::path artifacts_dir;
};

/// Detections and truth of a dataset as a count table plus, when the dataset
/// carries annotations, the detector's match statistics.
struct Featurized {
  std::vector<CountRow> rows;
  std::optional<DetectionReport> detection_report;
  AnnotationMap detections;
};

/// Runs the detector over every record of `dataset` (stage "detect") and
/// counts lesions (stage "featurize").
Featurized featurize_dataset(const Dataset& dataset, const RunConfig& config,
                             std::vector<std::string>* warnings = nullptr);

/// Stages split, preprocess, grid_search, train, evaluate and persist on an
/// existing count table. Writes into config.output_dir when it is set.
RunResult train_from_counts(std::vector<CountRow> rows, const RunConfig& config);

/// The full run: load, detect, featurize, then train_from_counts. Artifacts:
/// counts.csv, model.svm, report_train.{json,txt}, report_test.{json,txt},
/// cv_table.csv, run_config.json and, with annotations, report_detection.{json,txt}.
/// Failures are rethrown as RunError naming the stage; files already written
/// stay in place.
RunResult run_training(const RunConfig& config);

/// "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp();

}  // namespace drscreen

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

#include "drscreen/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "drscreen/errors.hpp"
#include "drscreen/model_io.hpp"
#include "drscreen/rng.hpp"

namespace drscreen {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

double ratio(long long num, long long den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

LesionSet intersect(const LesionSet& a, const LesionSet& b) {
  LesionSet out;
  for (auto c : a.classes()) {
    if (b.contains(c)) out.insert(c);
  }
  return out;
}

std::vector<int> int_labels(std::span<const DrGrade> grades) {
  std::vector<int> out;
  out.reserve(grades.size());
  for (auto g : grades) out.push_back(grade_id(g));
  return out;
}

ordered_json prf_json(const PrfScores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

GammaSetting gamma_from_json(const json& v) {
  if (v.is_string()) return GammaSetting::parse(v.get<std::string>());
  if (v.is_number()) return GammaSetting::fixed(v.get<double>());
  throw DomainError("gamma entries must be \"scale\" or a number");
}

ordered_json gamma_to_json(const GammaSetting& g) {
  if (g.scale) return "scale";
  return g.value;
}

fs::path resolve_path(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

template <class F>
auto run_stage(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const RunError&) {
    throw;
  } catch (const std::exception& e) {
    throw RunError(stage, e.what());
  }
}

}  // namespace

// ---- count table ----

std::string format_count_table(std::span<const CountRow> rows) {
  std::string out(kCountTableHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.image_id;
    for (double v : r.counts) {
      out += ',';
      out += shortest(v);
    }
    out += ',';
    out += std::to_string(grade_id(r.grade));
    out += '\n';
  }
  return out;
}

std::vector<CountRow> parse_count_table(std::string_view text, std::string_view source) {
  const std::string src(source);
  std::vector<CountRow> rows;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
    if (!header_seen) {
      if (line != kCountTableHeader) {
        throw LoadError(src + ":1: expected header '" + std::string(kCountTableHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto where = src + ":" + std::to_string(line_no) + ": ";
    const auto fields = split_csv(line);
    if (fields.size() != kLesionClassCount + 2) {
      throw LoadError(where + "expected " + std::to_string(kLesionClassCount + 2) + " fields, got " +
                      std::to_string(fields.size()));
    }
    CountRow row;
    row.image_id = std::string(fields[0]);
    if (row.image_id.empty()) throw LoadError(where + "empty image_id");
    for (std::size_t c = 0; c < kLesionClassCount; ++c) {
      const auto f = fields[c + 1];
      double v = 0.0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size() || !(v >= 0.0) || !std::isfinite(v)) {
        throw LoadError(where + "bad count '" + std::string(f) + "'");
      }
      row.counts[c] = v;
    }
    const auto gf = fields.back();
    long long g = 0;
    const auto res = std::from_chars(gf.data(), gf.data() + gf.size(), g);
    if (res.ec != std::errc() || res.ptr != gf.data() + gf.size()) {
      throw LoadError(where + "bad grade '" + std::string(gf) + "'");
    }
    try {
      row.grade = grade_from_int(g);
    } catch (const DomainError& e) {
      throw LoadError(where + e.what());
    }
    rows.push_back(std::move(row));
  }
  if (!header_seen) throw LoadError(src + ": empty count table");
  return rows;
}

void write_count_table(std::span<const CountRow> rows, const fs::path& path) {
  write_text_file(path, format_count_table(rows));
}

std::vector<CountRow> read_count_table(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw LoadError(e.what());
  }
  return parse_count_table(text, path.string());
}

CountRow make_count_row(std::string image_id, std::span<const Detection> detections,
                        DrGrade grade, const LesionSet& class_subset, bool confidence_weighted,
                        std::vector<std::string>* warnings) {
  const auto fv = extract_counts(image_id, detections, class_subset, confidence_weighted, warnings);
  CountRow row;
  row.image_id = std::move(image_id);
  row.grade = grade;
  const auto classes = class_subset.classes();
  for (std::size_t i = 0; i < classes.size(); ++i) row.counts[lesion_id(classes[i])] = fv.values[i];
  return row;
}

Matrix feature_matrix(std::span<const CountRow> rows, const LesionSet& classes) {
  const auto active = classes.classes();
  Matrix x(rows.size(), active.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < active.size(); ++c) x(r, c) = rows[r].counts[lesion_id(active[c])];
  }
  return x;
}

std::vector<DrGrade> grades_of(std::span<const CountRow> rows) {
  std::vector<DrGrade> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.grade);
  return out;
}

// ---- classification metrics ----

ClassificationReport classification_report(std::span<const DrGrade> truth,
                                           std::span<const DrGrade> predicted) {
  if (truth.size() != predicted.size()) {
    throw DomainError("truth and prediction counts differ");
  }
  ClassificationReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++r.confusion[grade_id(truth[i])][grade_id(predicted[i])];
    const int t = grade_id(truth[i]) >= grade_id(DrGrade::Moderate) ? 1 : 0;
    const int p = grade_id(predicted[i]) >= grade_id(DrGrade::Moderate) ? 1 : 0;
    ++r.referable_confusion[t][p];
  }
  r.total = static_cast<long long>(truth.size());
  long long trace = 0;
  for (int g = 0; g < kGradeCount; ++g) trace += r.confusion[g][g];
  r.accuracy = ratio(trace, r.total);

  int present = 0;
  for (int g = 0; g < kGradeCount; ++g) {
    long long row = 0;
    long long col = 0;
    for (int h = 0; h < kGradeCount; ++h) {
      row += r.confusion[g][h];
      col += r.confusion[h][g];
    }
    ClassCounts c;
    c.tp = r.confusion[g][g];
    c.fp = col - c.tp;
    c.fn = row - c.tp;
    r.per_class[g] = prf(c);
    r.present[g] = row > 0;
    if (r.present[g]) {
      ++present;
      r.macro_precision += r.per_class[g].precision;
      r.macro_recall += r.per_class[g].recall;
      r.macro_f1 += r.per_class[g].f1;
    }
  }
  if (present > 0) {
    r.macro_precision /= present;
    r.macro_recall /= present;
    r.macro_f1 /= present;
  }

  const auto& b = r.referable_confusion;
  r.referable_accuracy = ratio(b[0][0] + b[1][1], r.total);
  r.referable = prf(ClassCounts{b[1][1], b[0][1], b[1][0]});
  return r;
}

ClassificationReport evaluate(const SvmModel& model, const Matrix& features,
                              std::span<const DrGrade> truth) {
  if (features.rows() == 0) throw DomainError("cannot evaluate on an empty set");
  if (features.rows() != truth.size()) throw DomainError("feature rows and truth grades differ");
  if (features.cols() != model.feature_dim()) {
    throw DomainError("features have " + std::to_string(features.cols()) +
                      " columns, the model expects " + std::to_string(model.feature_dim()));
  }
  std::vector<DrGrade> pred;
  pred.reserve(truth.size());
  for (std::size_t r = 0; r < features.rows(); ++r) {
    pred.push_back(classify_counts(model, features.row(r)).grade);
  }
  return classification_report(truth, pred);
}

json to_json(const ClassificationReport& r, std::string_view split) {
  ordered_json j;
  j["kind"] = "classification";
  j["split"] = split;
  j["n_train"] = r.n_train;
  j["n_test"] = r.n_test;
  j["total"] = r.total;
  j["accuracy"] = r.accuracy;
  j["macro"] = prf_json({r.macro_precision, r.macro_recall, r.macro_f1});
  auto labels = ordered_json::array();
  for (int g = 0; g < kGradeCount; ++g) labels.push_back(grade_name(static_cast<DrGrade>(g)));
  j["labels"] = labels;
  auto cm = ordered_json::array();
  for (const auto& row : r.confusion) cm.push_back(row);
  j["confusion"] = cm;
  ordered_json per;
  for (int g = 0; g < kGradeCount; ++g) {
    auto pj = prf_json(r.per_class[g]);
    pj["present"] = r.present[g];
    per[std::string(grade_name(static_cast<DrGrade>(g)))] = pj;
  }
  j["per_class"] = per;
  ordered_json ref;
  ref["threshold"] = "MODERATE";
  ref["confusion"] = {r.referable_confusion[0], r.referable_confusion[1]};
  ref["accuracy"] = r.referable_accuracy;
  auto rp = prf_json(r.referable);
  for (auto& [k, v] : rp.items()) ref[k] = v;
  j["referable"] = ref;
  j["reference"] = {{"train_accuracy", ReferenceScores::kSvmTrainAccuracy},
                    {"test_accuracy", ReferenceScores::kSvmTestAccuracy},
                    {"f1", ReferenceScores::kSvmF1},
                    {"precision", ReferenceScores::kSvmPrecision},
                    {"note", "published figures on a different corpus; informational, never asserted"}};
  return json::parse(j.dump());
}

std::string to_text(const ClassificationReport& r, std::string_view split) {
  std::ostringstream os;
  os << "classification report (" << split << ")\n";
  os << "  n_train " << r.n_train << ", n_test " << r.n_test << ", evaluated " << r.total << "\n";
  os << "  accuracy   " << fixed4(r.accuracy) << "\n";
  os << "  macro P/R/F1 " << fixed4(r.macro_precision) << " " << fixed4(r.macro_recall) << " "
     << fixed4(r.macro_f1) << "\n\n";
  os << "  confusion (rows truth, cols predicted)\n  " << std::string(18, ' ');
  for (int g = 0; g < kGradeCount; ++g) os << "  " << g;
  os << "\n";
  for (int g = 0; g < kGradeCount; ++g) {
    char label[32];
    std::snprintf(label, sizeof(label), "%-18s", std::string(grade_display_name(static_cast<DrGrade>(g))).c_str());
    os << "  " << label;
    for (int h = 0; h < kGradeCount; ++h) {
      char cell[16];
      std::snprintf(cell, sizeof(cell), "%3lld", r.confusion[g][h]);
      os << cell;
    }
    os << "\n";
  }
  os << "\n  per grade        precision recall  f1\n";
  for (int g = 0; g < kGradeCount; ++g) {
    char line[128];
    std::snprintf(line, sizeof(line), "  %-16s %.4f    %.4f  %.4f%s\n",
                  std::string(grade_name(static_cast<DrGrade>(g))).c_str(), r.per_class[g].precision,
                  r.per_class[g].recall, r.per_class[g].f1, r.present[g] ? "" : "  (absent)");
    os << line;
  }
  os << "\n  referable (grade >= MODERATE): accuracy " << fixed4(r.referable_accuracy)
     << ", P " << fixed4(r.referable.precision) << ", R " << fixed4(r.referable.recall)
     << ", F1 " << fixed4(r.referable.f1) << "\n";
  os << "\n  reference (published, different corpus, not asserted): train accuracy "
     << ReferenceScores::kSvmTrainAccuracy << ", test accuracy " << ReferenceScores::kSvmTestAccuracy
     << ", F1 " << ReferenceScores::kSvmF1 << ", precision " << ReferenceScores::kSvmPrecision << "\n";
  return os.str();
}

// ---- hyperparameter search ----

void SvmGrid::validate() const {
  if (C.empty() || kernels.empty()) throw DomainError("svm grid lists must be non-empty");
  for (double c : C) {
    if (!(c > 0.0)) throw DomainError("grid C values must be positive");
  }
  const bool rbf = std::find(kernels.begin(), kernels.end(), KernelKind::Rbf) != kernels.end();
  if (rbf && gamma.empty()) throw DomainError("svm grid gamma list must be non-empty");
  for (const auto& g : gamma) {
    if (!g.scale && !(g.value > 0.0)) throw DomainError("grid gamma values must be positive");
  }
}

std::vector<GridPoint> expand_grid(const SvmGrid& grid, const Matrix& x) {
  grid.validate();
  std::vector<GridPoint> out;
  for (auto k : grid.kernels) {
    for (double c : grid.C) {
      if (k == KernelKind::Linear) {
        out.push_back(GridPoint{k, c, GammaSetting::fixed(1.0), 0.0});
        continue;
      }
      for (const auto& g : grid.gamma) out.push_back(GridPoint{k, c, g, g.resolve(x)});
    }
  }
  return out;
}

std::vector<int> stratified_folds(std::span<const DrGrade> labels, int k, std::uint64_t seed) {
  if (k < 2) throw DomainError("cv_folds must be at least 2");
  std::array<std::vector<std::size_t>, kGradeCount> by_grade;
  for (std::size_t i = 0; i < labels.size(); ++i) by_grade[grade_id(labels[i])].push_back(i);
  for (int g = 0; g < kGradeCount; ++g) {
    const auto n = by_grade[g].size();
    if (n > 0 && n < static_cast<std::size_t>(k)) {
      throw DomainError("cv_folds=" + std::to_string(k) + " exceeds the " + std::to_string(n) +
                        " samples of grade " + std::string(grade_name(static_cast<DrGrade>(g))) +
                        "; use cv_folds <= " + std::to_string(n));
    }
  }
  std::vector<int> fold(labels.size(), 0);
  Rng rng(derive_seed(seed, "cv-folds"));
  for (auto& idx : by_grade) {
    rng.shuffle(idx);
    for (std::size_t i = 0; i < idx.size(); ++i) fold[idx[i]] = static_cast<int>(i % k);
  }
  return fold;
}

GridSearchResult grid_search(const Matrix& x, std::span<const DrGrade> y, const SvmGrid& grid,
                             int cv_folds, std::uint64_t seed, const TrainConfig& base) {
  if (x.rows() != y.size()) throw DomainError("grade count does not match row count");
  const auto folds = stratified_folds(y, cv_folds, seed);
  GridSearchResult result;
  for (const auto& point : expand_grid(grid, x)) {
    CvRow row;
    row.point = point;
    TrainConfig cfg = base;
    cfg.C = point.C;
    cfg.kernel = point.kernel;
    cfg.gamma = point.kernel == KernelKind::Rbf ? GammaSetting::fixed(point.resolved_gamma)
                                                : GammaSetting::fixed(1.0);
    for (int f = 0; f < cv_folds; ++f) {
      std::vector<std::size_t> train_idx;
      std::vector<std::size_t> held_idx;
      std::vector<DrGrade> train_y;
      for (std::size_t r = 0; r < folds.size(); ++r) {
        if (folds[r] == f) {
          held_idx.push_back(r);
        } else {
          train_idx.push_back(r);
          train_y.push_back(y[r]);
        }
      }
      const auto model = train_multiclass(x.select_rows(train_idx), train_y, cfg);
      long long correct = 0;
      for (auto r : held_idx) {
        if (predict(model, x.row(r)).grade == y[r]) ++correct;
      }
      row.fold_accuracy.push_back(ratio(correct, static_cast<long long>(held_idx.size())));
    }
    row.mean_accuracy =
        std::accumulate(row.fold_accuracy.begin(), row.fold_accuracy.end(), 0.0) / cv_folds;
    result.table.push_back(std::move(row));
  }
  for (std::size_t i = 1; i < result.table.size(); ++i) {
    const auto& a = result.table[i];
    const auto& b = result.table[result.best_index];
    bool better = false;
    if (a.mean_accuracy != b.mean_accuracy) {
      better = a.mean_accuracy > b.mean_accuracy;
    } else if (a.point.C != b.point.C) {
      better = a.point.C < b.point.C;
    } else if (a.point.resolved_gamma != b.point.resolved_gamma) {
      better = a.point.resolved_gamma < b.point.resolved_gamma;
    }
    if (better) result.best_index = i;
  }
  return result;
}

std::string format_cv_table(const GridSearchResult& result) {
  std::string out = "kernel,C,gamma,resolved_gamma";
  const auto folds = result.table.empty() ? 0 : result.table.front().fold_accuracy.size();
  for (std::size_t f = 0; f < folds; ++f) out += ",fold" + std::to_string(f);
  out += ",mean_accuracy,best\n";
  for (std::size_t i = 0; i < result.table.size(); ++i) {
    const auto& row = result.table[i];
    out += std::string(kernel_name(row.point.kernel)) + "," + shortest(row.point.C) + ",";
    out += row.point.kernel == KernelKind::Linear ? "-" : row.point.gamma.to_string();
    out += "," + shortest(row.point.resolved_gamma);
    for (double a : row.fold_accuracy) out += "," + shortest(a);
    out += "," + shortest(row.mean_accuracy) + (i == result.best_index ? ",1\n" : ",0\n");
  }
  return out;
}

// ---- run configuration ----

void RunConfig::validate() const {
  if (cv_folds < 2) throw DomainError("cv_folds must be at least 2");
  grid.validate();
  detector.validate();
  if (!(split.test_fraction > 0.0 && split.test_fraction < 1.0)) {
    throw DomainError("test_fraction must be in (0,1)");
  }
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw DomainError("iou_threshold must be in (0,1]");
  if (!(tol > 0.0)) throw DomainError("tol must be positive");
  if (max_passes < 1) throw DomainError("max_passes must be positive");
}

RunConfig run_config_from_json(const json& j, const fs::path& base) {
  RunConfig c;
  try {
    if (!j.is_object()) throw DomainError("run config must be an object");
    c.seed = j.value("seed", c.seed);
    c.split.seed = c.seed;
    if (j.contains("dataset")) c.dataset = resolve_path(j.at("dataset").get<std::string>(), base);
    if (j.contains("output_dir")) c.output_dir = resolve_path(j.at("output_dir").get<std::string>(), base);
    if (j.contains("detector")) {
      c.detector = detector_config_from_json(j.at("detector"));
      c.detector.truth_dir = resolve_path(c.detector.truth_dir, base);
      c.detector.exchange_dir = resolve_path(c.detector.exchange_dir, base);
    }
    if (j.contains("preprocess")) {
      const auto& p = j.at("preprocess");
      c.preprocess.select_k = p.value("select_k", c.preprocess.select_k);
      c.preprocess.scale = p.value("scale", c.preprocess.scale);
      c.preprocess.pca.components = p.value("pca_components", c.preprocess.pca.components);
      c.preprocess.pca.variance_ratio = p.value("pca_variance_ratio", c.preprocess.pca.variance_ratio);
      c.preprocess.variance_floor = p.value("variance_floor", c.preprocess.variance_floor);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.test_fraction = s.value("test_fraction", c.split.test_fraction);
      c.split.stratified = s.value("stratified", c.split.stratified);
      c.split.seed = s.value("seed", c.split.seed);
    }
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      if (g.contains("C")) c.grid.C = g.at("C").get<std::vector<double>>();
      if (g.contains("gamma")) {
        c.grid.gamma.clear();
        for (const auto& v : g.at("gamma")) c.grid.gamma.push_back(gamma_from_json(v));
      }
      if (g.contains("kernels")) {
        c.grid.kernels.clear();
        for (const auto& v : g.at("kernels")) c.grid.kernels.push_back(kernel_from_name(v.get<std::string>()));
      }
    }
    c.cv_folds = j.value("cv_folds", c.cv_folds);
    c.confidence_weighted = j.value("confidence_weighted", c.confidence_weighted);
    c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
    c.tol = j.value("tol", c.tol);
    c.max_passes = j.value("max_passes", c.max_passes);
    c.timestamps = j.value("timestamps", c.timestamps);
  } catch (const json::exception& e) {
    throw LoadError(std::string("run config: ") + e.what());
  } catch (const DomainError& e) {
    throw LoadError(std::string("run config: ") + e.what());
  }
  return c;
}

json to_json(const RunConfig& c) {
  ordered_json j;
  j["dataset"] = c.dataset.string();
  j["output_dir"] = c.output_dir.string();
  j["seed"] = c.seed;
  j["detector"] = ordered_json::parse(to_json(c.detector).dump());
  j["preprocess"] = {{"select_k", c.preprocess.select_k},
                     {"scale", c.preprocess.scale},
                     {"pca_components", c.preprocess.pca.components},
                     {"pca_variance_ratio", c.preprocess.pca.variance_ratio},
                     {"variance_floor", c.preprocess.variance_floor}};
  j["split"] = {{"test_fraction", c.split.test_fraction},
                {"stratified", c.split.stratified},
                {"seed", c.split.seed}};
  auto gammas = ordered_json::array();
  for (const auto& g : c.grid.gamma) gammas.push_back(gamma_to_json(g));
  auto kernels = ordered_json::array();
  for (auto k : c.grid.kernels) kernels.push_back(kernel_name(k));
  j["grid"] = {{"C", c.grid.C}, {"gamma", gammas}, {"kernels", kernels}};
  j["cv_folds"] = c.cv_folds;
  j["confidence_weighted"] = c.confidence_weighted;
  j["iou_threshold"] = c.iou_threshold;
  j["tol"] = c.tol;
  j["max_passes"] = c.max_passes;
  j["timestamps"] = c.timestamps;
  return json::parse(j.dump());
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw LoadError(e.what());
  }
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

// ---- runs ----

Featurized featurize_dataset(const Dataset& dataset, const RunConfig& config,
                             std::vector<std::string>* warnings) {
  Featurized out;
  const auto subset = intersect(config.detector.class_subset, dataset.class_subset);
  if (subset.empty()) throw DomainError("no lesion class is active in both dataset and detector");

  out.detections = run_stage("detect", [&] {
    std::vector<DetectInput> inputs;
    for (const auto& r : dataset.records) {
      DetectInput in;
      in.image_id = r.image_id;
      in.image_path = dataset.image_path(r.image_id);
      if (auto it = dataset.annotations.find(r.image_id); it != dataset.annotations.end()) {
        in.truth = it->second;
      }
      inputs.push_back(std::move(in));
    }
    return detect_batch(inputs, config.detector);
  });

  run_stage("featurize", [&] {
    MatchResult matched;
    bool any_truth = false;
    for (const auto& r : dataset.records) {
      const auto it = out.detections.find(r.image_id);
      const std::vector<Detection> none;
      const auto& dets = it == out.detections.end() ? none : it->second;
      out.rows.push_back(
          make_count_row(r.image_id, dets, r.grade, subset, config.confidence_weighted, warnings));
      if (auto t = dataset.annotations.find(r.image_id); t != dataset.annotations.end()) {
        any_truth = true;
        matched += match(dets, t->second, config.iou_threshold);
      }
    }
    if (any_truth) out.detection_report = detection_metrics(matched, config.iou_threshold);
    return 0;
  });
  return out;
}

RunResult train_from_counts(std::vector<CountRow> rows, const RunConfig& config) {
  run_stage("config", [&] {
    config.validate();
    return 0;
  });
  RunResult result;
  result.artifacts_dir = config.output_dir;
  const bool persist = !config.output_dir.empty();
  LesionSet classes = intersect(config.detector.class_subset, LesionSet::all());

  std::vector<CountRow> train_rows;
  std::vector<CountRow> test_rows;
  run_stage("split", [&] {
    std::vector<GradedRecord> records;
    std::map<std::string, const CountRow*> by_id;
    for (const auto& r : rows) {
      records.push_back(GradedRecord{r.image_id, r.grade, laterality_from_id(r.image_id)});
      if (!by_id.emplace(r.image_id, &r).second) {
        throw DomainError("duplicate image_id '" + r.image_id + "' in count table");
      }
    }
    const auto split = stratified_split(records, config.split);
    for (const auto& r : split.train) train_rows.push_back(*by_id.at(r.image_id));
    for (const auto& r : split.test) test_rows.push_back(*by_id.at(r.image_id));
    return 0;
  });

  const auto x_train = feature_matrix(train_rows, classes);
  const auto x_test = feature_matrix(test_rows, classes);
  const auto y_train = grades_of(train_rows);
  const auto y_test = grades_of(test_rows);

  PreprocessParams pre;
  Matrix x_train_p;
  run_stage("preprocess", [&] {
    pre = fit_preprocess(x_train, int_labels(y_train), config.preprocess);
    x_train_p = apply_preprocess(x_train, pre);
    return 0;
  });

  TrainConfig base;
  base.tol = config.tol;
  base.max_passes = config.max_passes;
  base.seed = config.seed;
  if (std::set<DrGrade>(y_train.begin(), y_train.end()).size() < 2) {
    // Nothing to search; report the failure of the train stage itself.
    run_stage("train", [&] { return train_multiclass(x_train_p, y_train, base); });
  }
  result.grid = run_stage("grid_search", [&] {
    return grid_search(x_train_p, y_train, config.grid, config.cv_folds,
                       derive_seed(config.seed, "grid"), base);
  });

  run_stage("train", [&] {
    const auto& best = result.grid.best();
    TrainConfig cfg = base;
    cfg.C = best.C;
    cfg.kernel = best.kernel;
    cfg.gamma = best.gamma;
    result.model = train_multiclass(x_train_p, y_train, cfg, &result.warnings);
    result.model.preprocess = pre;
    result.model.feature_classes = classes;
    result.model.confidence_weighted = config.confidence_weighted;
    return 0;
  });

  run_stage("evaluate", [&] {
    result.train_report = evaluate(result.model, x_train, y_train);
    result.test_report = evaluate(result.model, x_test, y_test);
    for (auto* rep : {&result.train_report, &result.test_report}) {
      rep->n_train = train_rows.size();
      rep->n_test = test_rows.size();
    }
    ordered_json meta;
    if (config.timestamps) meta["created"] = utc_timestamp();
    meta["training_summary"] = {{"n_train", train_rows.size()},
                                {"n_test", test_rows.size()},
                                {"train_accuracy", result.train_report.accuracy},
                                {"test_accuracy", result.test_report.accuracy},
                                {"test_macro_f1", result.test_report.macro_f1},
                                {"cv_mean_accuracy", result.grid.table[result.grid.best_index].mean_accuracy}};
    result.model.metadata = json::parse(meta.dump());
    return 0;
  });

  result.counts = std::move(rows);
  if (persist) {
    run_stage("persist", [&] {
      const auto& dir = config.output_dir;
      fs::create_directories(dir);
      write_count_table(result.counts, dir / "counts.csv");
      save_model(result.model, dir / "model.svm");
      write_text_file(dir / "report_train.json", to_json(result.train_report, "train").dump(2) + "\n");
      write_text_file(dir / "report_train.txt", to_text(result.train_report, "train"));
      write_text_file(dir / "report_test.json", to_json(result.test_report, "test").dump(2) + "\n");
      write_text_file(dir / "report_test.txt", to_text(result.test_report, "test"));
      write_text_file(dir / "cv_table.csv", format_cv_table(result.grid));
      write_text_file(dir / "run_config.json", to_json(config).dump(2) + "\n");
      return 0;
    });
  }
  return result;
}

RunResult run_training(const RunConfig& config) {
  run_stage("config", [&] {
    config.validate();
    return 0;
  });
  const auto dataset = run_stage("load", [&] {
    if (config.dataset.empty()) throw DomainError("no dataset manifest given");
    return load_dataset(config.dataset);
  });
  std::vector<std::string> warnings;
  auto feats = featurize_dataset(dataset, config, &warnings);
  if (!config.output_dir.empty()) {
    run_stage("featurize", [&] {
      fs::create_directories(config.output_dir);
      write_count_table(feats.rows, config.output_dir / "counts.csv");
      if (feats.detection_report) {
        write_text_file(config.output_dir / "report_detection.json",
                        to_json(*feats.detection_report).dump(2) + "\n");
        write_text_file(config.output_dir / "report_detection.txt", to_text(*feats.detection_report));
      }
      return 0;
    });
  }
  auto result = train_from_counts(std::move(feats.rows), config);
  result.detection_report = feats.detection_report;
  result.warnings.insert(result.warnings.begin(), warnings.begin(), warnings.end());
  return result;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace drscreen

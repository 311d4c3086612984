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

#include <doctest.h>

#include <algorithm>
#include <set>

#include "drscreen/errors.hpp"
#include "drscreen/model_io.hpp"
#include "drscreen/pipeline.hpp"
#include "drscreen/rng.hpp"
#include "drscreen/synthetic.hpp"
#include "test_util.hpp"

using namespace drscreen;
using drscreen::testing::det;
using drscreen::testing::slurp;
using drscreen::testing::spit;
using drscreen::testing::TempDir;

namespace {

std::vector<DrGrade> grades(std::initializer_list<int> ids) {
  std::vector<DrGrade> out;
  for (int id : ids) out.push_back(static_cast<DrGrade>(id));
  return out;
}

/// Count rows following the synthetic rule table.
std::vector<CountRow> rule_rows(int per_grade, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CountRow> rows;
  int k = 0;
  for (int g = 0; g < kGradeCount; ++g) {
    for (int i = 0; i < per_grade; ++i, ++k) {
      CountRow r;
      r.image_id = std::to_string(k / 2 + 1) + (k % 2 ? "_right" : "_left");
      r.grade = static_cast<DrGrade>(g);
      const auto c = synthetic_lesion_counts(r.grade, rng);
      for (int j = 0; j < kLesionClassCount; ++j) r.counts[j] = c[j];
      rows.push_back(r);
    }
  }
  return rows;
}

RunConfig small_config() {
  RunConfig c;
  c.grid.C = {1.0, 10.0};
  c.grid.gamma = {GammaSetting::auto_scale(), GammaSetting::fixed(0.1)};
  c.cv_folds = 3;
  c.timestamps = false;
  return c;
}

}  // namespace

TEST_CASE("classification report: 3-class confusion") {
  // Truth/prediction pairs spelling out [[2,1,0],[0,2,0],[0,1,2]].
  const auto truth = grades({0, 0, 0, 1, 1, 2, 2, 2});
  const auto pred = grades({0, 0, 1, 1, 1, 1, 2, 2});
  const auto r = classification_report(truth, pred);
  CHECK(r.confusion[0][0] == 2);
  CHECK(r.confusion[0][1] == 1);
  CHECK(r.confusion[2][1] == 1);
  CHECK(r.total == 8);
  CHECK(r.accuracy == 0.75);
  CHECK(r.per_class[0].precision == 1.0);
  CHECK(r.per_class[0].recall == doctest::Approx(2.0 / 3.0));
  CHECK(r.per_class[1].precision == doctest::Approx(0.5));
  CHECK(r.present[0]);
  CHECK_FALSE(r.present[3]);
  const double f0 = 2 * (2.0 / 3.0) / (1 + 2.0 / 3.0);
  const double f1 = 2 * 0.5 * 1.0 / 1.5;
  const double f2 = f0;
  CHECK(r.macro_f1 == doctest::Approx((f0 + f1 + f2) / 3));
}

TEST_CASE("classification report: perfect and single-class cases") {
  const auto t = grades({0, 1, 2, 3, 4, 4});
  const auto r = classification_report(t, t);
  CHECK(r.accuracy == 1.0);
  for (int i = 0; i < kGradeCount; ++i) {
    for (int j = 0; j < kGradeCount; ++j) {
      if (i != j) CHECK(r.confusion[i][j] == 0);
    }
  }
  const auto one = grades({2, 2, 2});
  const auto s = classification_report(one, one);
  CHECK(s.macro_f1 == 1.0);
  CHECK(s.macro_precision == 1.0);
  CHECK(s.macro_recall == 1.0);
}

TEST_CASE("referable view collapses at MODERATE") {
  const auto truth = grades({0, 1, 2, 3, 4, 1});
  const auto pred = grades({1, 2, 2, 4, 0, 0});
  const auto r = classification_report(truth, pred);
  // NO/YES: truth N N Y Y Y N, pred N Y Y Y N N.
  CHECK(r.referable_confusion[0][0] == 2);
  CHECK(r.referable_confusion[0][1] == 1);
  CHECK(r.referable_confusion[1][0] == 1);
  CHECK(r.referable_confusion[1][1] == 2);
  CHECK(r.referable_accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(r.referable.precision == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("property: confusion identities on random predictions") {
  Rng rng(40);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = rng.range(1, 60);
    std::vector<DrGrade> t, p;
    for (int i = 0; i < n; ++i) {
      t.push_back(static_cast<DrGrade>(rng.range(0, 4)));
      p.push_back(static_cast<DrGrade>(rng.range(0, 4)));
    }
    const auto r = classification_report(t, p);
    long long trace = 0, sum = 0;
    for (int i = 0; i < kGradeCount; ++i) {
      trace += r.confusion[i][i];
      long long row = 0, col = 0;
      for (int j = 0; j < kGradeCount; ++j) {
        sum += r.confusion[i][j];
        row += r.confusion[i][j];
        col += r.confusion[j][i];
        CHECK(r.confusion[i][j] >= 0);
      }
      const double prec = col ? double(r.confusion[i][i]) / double(col) : 0.0;
      const double rec = row ? double(r.confusion[i][i]) / double(row) : 0.0;
      CHECK(r.per_class[i].precision == doctest::Approx(prec));
      CHECK(r.per_class[i].recall == doctest::Approx(rec));
      CHECK(r.present[i] == (row > 0));
    }
    CHECK(sum == n);
    CHECK(r.accuracy == doctest::Approx(double(trace) / double(n)));
  }
}

TEST_CASE("evaluate rejects an empty set and reports serialize") {
  auto rows = rule_rows(6, 1);
  TrainConfig cfg;
  auto m = train_multiclass(feature_matrix(rows, LesionSet::all()), grades_of(rows), cfg);
  CHECK_THROWS_AS(evaluate(m, Matrix(0, 7), std::vector<DrGrade>{}), DomainError);
  const auto r = evaluate(m, feature_matrix(rows, LesionSet::all()), grades_of(rows));
  CHECK(r.total == 30);
  const auto j = to_json(r, "test");
  CHECK(j["split"] == "test");
  CHECK(j["confusion"].size() == 5);
  CHECK(j.contains("reference"));
  CHECK(to_text(r, "test").find("accuracy") != std::string::npos);
}

TEST_CASE("count tables") {
  std::vector<CountRow> rows(2);
  rows[0].image_id = "1_left";
  rows[0].counts = {2, 1, 0, 0, 0, 0, 0};
  rows[0].grade = DrGrade::Moderate;
  rows[1].image_id = "1_right";
  rows[1].counts = {0.5, 0, 0, 0, 0, 0, 1.25};
  rows[1].grade = DrGrade::ProliferativeDr;
  const auto text = format_count_table(rows);
  CHECK(text ==
        "image_id,ma,hem,he,se,irma,vb,prolif,grade\n"
        "1_left,2,1,0,0,0,0,0,2\n"
        "1_right,0.5,0,0,0,0,0,1.25,4\n");
  CHECK(parse_count_table(text, "c") == rows);
  CHECK_THROWS_WITH_AS(parse_count_table("image_id,ma\n", "c"), doctest::Contains("c:1"), LoadError);
  CHECK_THROWS_WITH_AS(parse_count_table(text + "x,1,1,1,1,1,1,1,9\n", "c"), doctest::Contains("c:4"),
                       LoadError);
  CHECK_THROWS_AS(parse_count_table(text + "x,1,1,1,1,-1,1,1,0\n", "c"), LoadError);

  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<CountRow> r(5);
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i].image_id = "img" + std::to_string(i);
      for (auto& v : r[i].counts) v = rng.uniform(0, 10);
      r[i].grade = static_cast<DrGrade>(rng.range(0, 4));
    }
    CHECK(parse_count_table(format_count_table(r), "p") == r);
  }

  const auto m = feature_matrix(rows, LesionSet({LesionClass::Hemorrhage, LesionClass::Proliferative}));
  CHECK(m.cols() == 2);
  CHECK(m(0, 0) == 1.0);
  CHECK(m(1, 1) == 1.25);
}

TEST_CASE("make_count_row counts per class and keeps inactive columns at 0") {
  const std::vector<Detection> d{det(LesionClass::Microaneurysm, .5, .5, .1, .1, .5),
                                 det(LesionClass::Irma, .2, .2, .1, .1)};
  const auto r = make_count_row("a", d, DrGrade::Severe, LesionSet({LesionClass::Microaneurysm}), false);
  CHECK(r.counts == std::array<double, 7>{1, 0, 0, 0, 0, 0, 0});
  const auto w = make_count_row("a", d, DrGrade::Severe, LesionSet::all(), true);
  CHECK(w.counts == std::array<double, 7>{0.5, 0, 0, 0, 1, 0, 0});
}

TEST_CASE("stratified folds") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<DrGrade> y;
    std::array<int, kGradeCount> n{};
    const int k = rng.range(2, 5);
    for (int g = 0; g < kGradeCount; ++g) {
      n[g] = rng.range(k, 20);
      for (int i = 0; i < n[g]; ++i) y.push_back(static_cast<DrGrade>(g));
    }
    rng.shuffle(y);
    const auto folds = stratified_folds(y, k, trial);
    CHECK(folds == stratified_folds(y, k, trial));
    for (int g = 0; g < kGradeCount; ++g) {
      for (int f = 0; f < k; ++f) {
        int c = 0;
        for (std::size_t i = 0; i < y.size(); ++i) c += (grade_id(y[i]) == g && folds[i] == f);
        CHECK(c >= n[g] / k);
        CHECK(c <= (n[g] + k - 1) / k);
      }
    }
  }
  CHECK_THROWS_WITH_AS(stratified_folds(grades({0, 0, 0, 1, 1}), 3, 1), doctest::Contains("fold"),
                       DomainError);
}

TEST_CASE("grid expansion and tie rules") {
  const auto x = Matrix::from_rows({{0, 1}, {1, 0}});
  SvmGrid g;
  g.C = {1, 10};
  g.gamma = {GammaSetting::fixed(0.5), GammaSetting::fixed(2)};
  g.kernels = {KernelKind::Linear, KernelKind::Rbf};
  const auto pts = expand_grid(g, x);
  REQUIRE(pts.size() == 6);
  CHECK(pts[0].kernel == KernelKind::Linear);
  CHECK(pts[1].C == 10);
  CHECK(pts[2].kernel == KernelKind::Rbf);
  CHECK(pts[2].C == 1);
  CHECK(pts[2].resolved_gamma == 0.5);
  CHECK(pts[3].resolved_gamma == 2);

  const auto rows = rule_rows(6, 3);
  const auto fx = feature_matrix(rows, LesionSet::all());
  const auto fy = grades_of(rows);
  SvmGrid one;
  one.C = {1};
  one.gamma = {GammaSetting::fixed(0.1)};
  const auto r1 = grid_search(fx, fy, one, 3, 1, TrainConfig{});
  CHECK(r1.table.size() == 1);
  CHECK(r1.best_index == 0);

  SvmGrid twice;
  twice.C = {1, 1};
  twice.gamma = {GammaSetting::fixed(0.1)};
  const auto r2 = grid_search(fx, fy, twice, 3, 1, TrainConfig{});
  CHECK(r2.table.size() == 2);
  CHECK(r2.table[0].mean_accuracy == r2.table[1].mean_accuracy);
  CHECK(r2.best_index == 0);

  // Separable counts: every point reaches the same (perfect) CV accuracy, so
  // the smallest C and then the smallest gamma win.
  SvmGrid ties;
  ties.C = {100, 10};
  ties.gamma = {GammaSetting::fixed(0.2), GammaSetting::fixed(0.1)};
  const auto r3 = grid_search(fx, fy, ties, 3, 1, TrainConfig{});
  bool all_equal = true;
  for (const auto& row : r3.table) all_equal &= row.mean_accuracy == r3.table[0].mean_accuracy;
  if (all_equal) {
    CHECK(r3.best().C == 10);
    CHECK(r3.best().resolved_gamma == 0.1);
  }
  CHECK(format_cv_table(r3).rfind("kernel,C,gamma", 0) == 0);
}

TEST_CASE("separable rule counts: RBF grid points with C >= 10 reach CV accuracy 0.9") {
  const auto rows = rule_rows(40, 9);
  const auto x = feature_matrix(rows, LesionSet::all());
  PreprocessConfig pc;
  const auto pre = fit_preprocess(x, std::vector<int>(), pc);
  const auto r = grid_search(apply_preprocess(x, pre), grades_of(rows), SvmGrid{}, 5, 4, TrainConfig{});
  CHECK(r.table.size() == 16);
  CHECK(r.table[r.best_index].mean_accuracy >= 0.9);
  for (const auto& row : r.table) {
    INFO(row.point.C, " ", row.point.resolved_gamma);
    if (row.point.C >= 10) CHECK(row.mean_accuracy >= 0.9);
  }
  // C = 0.1 trades training errors on single-lesion images for margin.
  double weakest = 1.0;
  for (const auto& row : r.table) {
    if (row.point.C == 0.1) weakest = std::min(weakest, row.mean_accuracy);
  }
  CHECK(weakest < 0.9);
}

TEST_CASE("no leakage: test rows do not influence preprocessing or the CV winner") {
  auto rows = rule_rows(12, 5);
  auto cfg = small_config();
  cfg.preprocess.select_k = 5;
  cfg.preprocess.pca.components = 3;
  const auto a = train_from_counts(rows, cfg);

  std::vector<GradedRecord> recs;
  for (const auto& r : rows) recs.push_back(GradedRecord{r.image_id, r.grade, Laterality::Unknown});
  const auto split = stratified_split(recs, cfg.split);
  std::set<std::string> test_ids;
  for (const auto& r : split.test) test_ids.insert(r.image_id);
  REQUIRE_FALSE(test_ids.empty());
  Rng rng(6);
  for (auto& r : rows) {
    if (!test_ids.count(r.image_id)) continue;
    for (auto& v : r.counts) v = std::round(rng.uniform(0, 50));
  }
  const auto b = train_from_counts(rows, cfg);
  CHECK(to_json(a.model.preprocess).dump() == to_json(b.model.preprocess).dump());
  CHECK(a.grid.best_index == b.grid.best_index);
  CHECK(format_cv_table(a.grid) == format_cv_table(b.grid));
}

TEST_CASE("a single-grade table fails at the train stage") {
  auto rows = rule_rows(10, 1);
  rows.erase(std::remove_if(rows.begin(), rows.end(), [](auto& r) { return r.grade != DrGrade::Mild; }),
             rows.end());
  try {
    train_from_counts(rows, small_config());
    FAIL("expected a run error");
  } catch (const RunError& e) {
    CHECK(e.stage() == "train");
  }
}

TEST_CASE("run config JSON") {
  auto c = small_config();
  c.dataset = "/data/manifest.json";
  c.output_dir = "/runs/a";
  c.seed = 9;
  c.split.seed = 11;
  c.grid.kernels = {KernelKind::Linear, KernelKind::Rbf};
  c.preprocess.select_k = 4;
  const auto back = run_config_from_json(to_json(c));
  CHECK(back.dataset == c.dataset);
  CHECK(back.seed == 9);
  CHECK(back.split.seed == 11);
  CHECK(back.grid.C == c.grid.C);
  CHECK(back.grid.gamma == c.grid.gamma);
  CHECK(back.grid.kernels == c.grid.kernels);
  CHECK(back.preprocess.select_k == 4);
  CHECK(back.timestamps == false);

  const auto rel = run_config_from_json({{"dataset", "d/manifest.json"}, {"seed", 3}}, "/base");
  CHECK(rel.dataset == fs::path("/base/d/manifest.json"));
  CHECK(rel.split.seed == 3);
  CHECK(rel.cv_folds == 5);

  CHECK_THROWS_AS(run_config_from_json({{"grid", {{"gamma", {"wide"}}}}}), LoadError);
  CHECK_THROWS_AS(run_config_from_json({{"seed", "x"}}), LoadError);
  auto bad = small_config();
  bad.cv_folds = 1;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = small_config();
  bad.grid.C.clear();
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("full runs are reproducible and their count table retrains to the same model") {
  SyntheticOptions opt;
  opt.n_per_grade = 12;
  opt.image_size = 64;
  TempDir dir;
  auto cfg = small_config();
  cfg.dataset = write_synthetic_dataset(generate_synthetic_dataset(opt), dir / "data");
  cfg.output_dir = dir / "run1";
  const auto a = run_training(cfg);
  cfg.output_dir = dir / "run2";
  run_training(cfg);
  for (const char* f : {"counts.csv", "model.svm", "report_train.json", "report_test.json",
                        "report_test.txt", "cv_table.csv", "report_detection.json"}) {
    INFO(f);
    CHECK(slurp(dir / "run1" / f) == slurp(dir / "run2" / f));
  }
  REQUIRE(a.detection_report);
  CHECK(a.detection_report->micro.f1 == 1.0);
  CHECK(a.test_report.accuracy >= 0.9);

  cfg.output_dir = dir / "run3";
  train_from_counts(read_count_table(dir / "run1" / "counts.csv"), cfg);
  CHECK(slurp(dir / "run1" / "model.svm") == slurp(dir / "run3" / "model.svm"));

  const auto loaded = load_model(dir / "run1" / "model.svm");
  CHECK(loaded.classes.size() == 5);
}

TEST_CASE("run errors name the stage and keep earlier artifacts") {
  TempDir dir;
  auto cfg = small_config();
  cfg.dataset = dir / "nowhere";
  try {
    run_training(cfg);
    FAIL("expected a run error");
  } catch (const RunError& e) {
    CHECK(e.stage() == "load");
  }

  SyntheticOptions opt;
  opt.n_per_grade = 3;
  opt.image_size = 64;
  cfg.dataset = write_synthetic_dataset(generate_synthetic_dataset(opt), dir / "data");
  cfg.output_dir = dir / "run";
  cfg.cv_folds = 4;
  try {
    run_training(cfg);
    FAIL("expected a run error");
  } catch (const RunError& e) {
    CHECK(e.stage() == "grid_search");
    CHECK(std::string(e.what()).rfind("grid_search: ", 0) == 0);
  }
  CHECK(std::filesystem::exists(dir / "run" / "counts.csv"));
  CHECK_FALSE(std::filesystem::exists(dir / "run" / "model.svm"));
}

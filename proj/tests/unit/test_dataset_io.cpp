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
#include <cmath>
#include <map>
#include <set>

#include "drscreen/dataset_io.hpp"
#include "drscreen/errors.hpp"
#include "drscreen/rng.hpp"
#include "test_util.hpp"

using namespace drscreen;
using drscreen::testing::det;
using drscreen::testing::slurp;
using drscreen::testing::spit;
using drscreen::testing::TempDir;

TEST_CASE("label rows map to graded records") {
  const auto recs = parse_labels("image,level\n10_left,0\n10_right,4\n", "t.csv");
  REQUIRE(recs.size() == 2);
  CHECK(recs[0] == GradedRecord{"10_left", DrGrade::NoDr, Laterality::Left});
  CHECK(recs[1] == GradedRecord{"10_right", DrGrade::ProliferativeDr, Laterality::Right});
}

TEST_CASE("label table errors name the row") {
  CHECK_THROWS_WITH_AS(parse_labels("image,level\n10_left,0\nx,7\n", "t.csv"),
                       doctest::Contains("t.csv:3"), LoadError);
  CHECK_THROWS_WITH_AS(parse_labels("image,grade\n1_left,0\n", "t.csv"),
                       doctest::Contains("level"), LoadError);
  CHECK_THROWS_WITH_AS(parse_labels("image,level\na,1\nb,x\n", "t.csv"), doctest::Contains("t.csv:3"),
                       LoadError);
  CHECK_THROWS_WITH_AS(parse_labels("image,level\na,1\na,2\n", "t.csv"),
                       doctest::Contains("duplicate"), LoadError);
}

TEST_CASE("label tables tolerate BOM, CRLF and column order") {
  const auto recs = parse_labels("\xEF\xBB\xBFlevel,image\r\n2,7_left\r\n", "t.csv");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].image_id == "7_left");
  CHECK(recs[0].grade == DrGrade::Moderate);
}

TEST_CASE("labels round-trip through a file") {
  TempDir dir;
  std::vector<GradedRecord> recs{GradedRecord::make("1_left", DrGrade::Mild),
                                 GradedRecord::make("1_right", DrGrade::Severe)};
  write_labels(recs, dir / "labels.csv");
  CHECK(load_labels(dir / "labels.csv") == recs);
}

TEST_CASE("annotation lines") {
  const auto a = parse_annotations("0 0.5 0.5 0.2 0.1\n", "a");
  REQUIRE(a.size() == 1);
  CHECK(a[0] == det(LesionClass::Microaneurysm, 0.5, 0.5, 0.2, 0.1, 1.0));

  const auto b = parse_annotations("6 0.5 0.5 0.5 0.5 0.9\n", "b");
  REQUIRE(b.size() == 1);
  CHECK(b[0].lesion == LesionClass::Proliferative);
  CHECK(b[0].confidence == 0.9);

  CHECK_THROWS_WITH_AS(parse_annotations("0 1.5 0.5 0.2 0.1\n", "c"), doctest::Contains("c:1"),
                       ParseError);
  CHECK_THROWS_AS(parse_annotations("7 0.5 0.5 0.2 0.1\n", "d"), ParseError);
  CHECK_THROWS_AS(parse_annotations("0 0.5 0.5 0 0.1\n", "e"), ParseError);
  CHECK_THROWS_AS(parse_annotations("0 0.5 0.5 0.2\n", "f"), ParseError);
  CHECK_THROWS_AS(parse_annotations("0 0.5 0.5 0.2 0.1 0.9 1\n", "g"), ParseError);
  CHECK_THROWS_WITH_AS(parse_annotations("0 0.5 0.5 0.2 0.1\n1 0.5 0.5 -1 0.1\n", "h"),
                       doctest::Contains("h:2"), ParseError);
  CHECK_THROWS_AS(parse_annotations("0 0.5 0.5 0.2 0.1\n", "i", {.require_confidence = true}),
                  ParseError);
}

TEST_CASE("annotation files: empty list, single box, file errors") {
  TempDir dir;
  write_annotation_file({}, dir / "empty.txt", false);
  CHECK(slurp(dir / "empty.txt").empty());
  CHECK(read_annotation_file(dir / "empty.txt", "empty").empty());

  const std::vector<Detection> one{det(LesionClass::Hemorrhage, 0.25, 0.75, 0.125, 0.0625, 0.5)};
  write_annotation_file(one, dir / "one.txt", true);
  CHECK(slurp(dir / "one.txt") == "1 0.250000 0.750000 0.125000 0.062500 0.500000\n");
  CHECK(read_annotation_file(dir / "one.txt", "one") == one);

  spit(dir / "bad.txt", "0 0.5 0.5 0.2 0.1\n0 2 0.5 0.2 0.1\n");
  CHECK_THROWS_WITH_AS(read_annotation_file(dir / "bad.txt", "bad"), doctest::Contains(":2"),
                       ParseError);
  CHECK_THROWS_AS(write_annotation_file(one, dir / "one.txt" / "y.txt", false), IoError);
}

namespace {

double snap6(double v) { return std::round(v * 1e6) / 1e6; }

std::vector<Detection> random_boxes(Rng& rng, int n, bool with_conf) {
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    const double w = snap6(rng.uniform(0.001, 0.4));
    const double h = snap6(rng.uniform(0.001, 0.4));
    Detection d;
    d.lesion = lesion_from_id(static_cast<int>(rng.below(kLesionClassCount)));
    d.box = BBox{snap6(rng.uniform(w / 2, 1 - w / 2)), snap6(rng.uniform(h / 2, 1 - h / 2)), w, h};
    d.confidence = with_conf ? snap6(rng.uniform()) : 1.0;
    out.push_back(d);
  }
  return out;
}

}  // namespace

TEST_CASE("property: read after write is the identity at six decimals") {
  Rng rng(123);
  for (int trial = 0; trial < 300; ++trial) {
    const bool conf = trial % 2 == 0;
    const auto boxes = random_boxes(rng, static_cast<int>(rng.below(12)), conf);
    const auto text = format_annotations(boxes, conf);
    const auto back = parse_annotations(text, "p");
    CHECK(back == boxes);
    CHECK(format_annotations(back, conf) == text);
  }
}

namespace {

std::vector<GradedRecord> records_per_grade(const std::array<int, kGradeCount>& n) {
  std::vector<GradedRecord> out;
  int k = 0;
  for (int g = 0; g < kGradeCount; ++g) {
    for (int i = 0; i < n[g]; ++i, ++k) {
      out.push_back(GradedRecord::make(std::to_string(k / 2 + 1) + (k % 2 ? "_right" : "_left"),
                                       static_cast<DrGrade>(g)));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("split contract: 10 per grade at 0.2 puts 2 of each grade in test") {
  const auto recs = records_per_grade({10, 10, 10, 10, 10});
  const auto a = stratified_split(recs, SplitSpec{0.2, 42, true});
  const auto b = stratified_split(recs, SplitSpec{0.2, 42, true});
  CHECK(a.test == b.test);
  CHECK(a.train == b.train);
  std::array<int, kGradeCount> per{};
  for (const auto& r : a.test) ++per[grade_id(r.grade)];
  for (int g = 0; g < kGradeCount; ++g) CHECK(per[g] == 2);
  CHECK(a.train.size() == 40);
  const auto c = stratified_split(recs, SplitSpec{0.2, 7, true});
  CHECK(c.test != a.test);
}

TEST_CASE("property: splits lose and duplicate nothing; per-grade test counts within 1") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<int, kGradeCount> n{};
    for (auto& v : n) v = static_cast<int>(rng.below(30));
    const double f = rng.uniform(0.1, 0.5);
    bool feasible = true;
    int total = 0;
    for (int v : n) {
      total += v;
      if (v > 0) {
        const auto t = std::llround(v * f);
        if (t < 1 || t >= v) feasible = false;
      }
    }
    if (total == 0) continue;
    const auto recs = records_per_grade(n);
    if (!feasible) {
      CHECK_THROWS_AS(stratified_split(recs, SplitSpec{f, rng.next_u64(), true}), SplitError);
      continue;
    }
    const auto s = stratified_split(recs, SplitSpec{f, rng.next_u64(), true});
    std::multiset<std::string> ids;
    for (const auto& r : s.train) ids.insert(r.image_id);
    for (const auto& r : s.test) ids.insert(r.image_id);
    CHECK(ids.size() == recs.size());
    CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == recs.size());
    std::array<int, kGradeCount> per{};
    for (const auto& r : s.test) ++per[grade_id(r.grade)];
    for (int g = 0; g < kGradeCount; ++g) CHECK(std::abs(per[g] - n[g] * f) <= 1.0);
  }
}

TEST_CASE("split errors") {
  CHECK_THROWS_AS(stratified_split({}, SplitSpec{}), SplitError);
  const auto recs = records_per_grade({10, 1, 0, 0, 0});
  CHECK_THROWS_WITH_AS(stratified_split(recs, SplitSpec{0.2, 1, true}), doctest::Contains("MILD"),
                       SplitError);
  CHECK_THROWS_AS(stratified_split(records_per_grade({5, 5, 0, 0, 0}), SplitSpec{1.0, 1, true}),
                  SplitError);
  const auto plain = stratified_split(recs, SplitSpec{0.2, 1, false});
  CHECK(plain.test.size() == 2);
  CHECK(plain.train.size() == 9);
}

TEST_CASE("manifests resolve from file, directory or stem") {
  TempDir dir;
  spit(dir / "labels.csv", "image,level\n1_left,1\n1_right,0\n");
  spit(dir / "ann" / "1_left.txt", "0 0.5 0.5 0.1 0.1\n");
  DatasetManifest m;
  m.image_dir = dir / "images";
  m.labels = dir / "labels.csv";
  m.annotation_dir = dir / "ann";
  m.class_subset = LesionSet({LesionClass::Microaneurysm, LesionClass::Hemorrhage});
  write_manifest(m, dir / "manifest.json");
  CHECK(slurp(dir / "manifest.json").find("\"labels\": \"labels.csv\"") != std::string::npos);

  for (const auto& p : {dir / "manifest.json", dir.path(), dir / "manifest"}) {
    CHECK(resolve_manifest_path(p) == dir / "manifest.json");
    const auto back = load_manifest(p);
    CHECK(back.labels == dir / "labels.csv");
    CHECK(back.class_subset == m.class_subset);
  }

  const auto ds = load_dataset(dir.path());
  CHECK(ds.records.size() == 2);
  CHECK(ds.annotations.size() == 1);
  CHECK(ds.annotations.at("1_left").size() == 1);
  CHECK(ds.find("1_right") != nullptr);
  CHECK(ds.find("2_left") == nullptr);
  CHECK(ds.image_path("1_left") == dir / "images" / "1_left.png");

  spit(dir / "bad.json", "{\"schema\": \"other\", \"labels\": \"labels.csv\", \"image_dir\": \"images\"}");
  CHECK_THROWS_WITH_AS(load_manifest(dir / "bad.json"), doctest::Contains("schema"), LoadError);
  spit(dir / "trunc.json", "{\"schema\": ");
  CHECK_THROWS_AS(load_manifest(dir / "trunc.json"), LoadError);
}

TEST_CASE("annotations of unknown images are rejected when loading a dataset") {
  TempDir dir;
  spit(dir / "labels.csv", "image,level\n1_left,1\n");
  spit(dir / "ann" / "9_left.txt", "0 0.5 0.5 0.1 0.1\n");
  DatasetManifest m;
  m.image_dir = dir / "images";
  m.labels = dir / "labels.csv";
  m.annotation_dir = dir / "ann";
  write_manifest(m, dir / "manifest.json");
  const auto ds = load_dataset(dir.path());
  for (const auto& [id, boxes] : ds.annotations) CHECK(ds.find(id) != nullptr);
}

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
#include <numeric>
#include <set>

#include "drscreen/detector.hpp"
#include "drscreen/deteval.hpp"
#include "drscreen/rng.hpp"
#include "test_util.hpp"

using namespace drscreen;
using drscreen::testing::det;

namespace {

/// Independent IoU from corner arithmetic.
double iou_oracle(const BBox& a, const BBox& b) {
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2, ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2, by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

/// Greedy matching traced literally: repeatedly take the highest-confidence
/// unvisited detection and give it its best free truth box.
long long greedy_tp(const std::vector<Detection>& dets, const std::vector<Detection>& truth,
                    double thr) {
  std::vector<bool> visited(dets.size(), false), taken(truth.size(), false);
  long long tp = 0;
  for (std::size_t step = 0; step < dets.size(); ++step) {
    std::size_t pick = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (!visited[i] && (pick == dets.size() || dets[i].confidence > dets[pick].confidence)) pick = i;
    }
    visited[pick] = true;
    double best = -1;
    std::size_t best_t = truth.size();
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (taken[t] || truth[t].lesion != dets[pick].lesion) continue;
      const double v = iou_oracle(dets[pick].box, truth[t].box);
      if (v >= thr && v > best) {
        best = v;
        best_t = t;
      }
    }
    if (best_t < truth.size()) {
      taken[best_t] = true;
      ++tp;
    }
  }
  return tp;
}

Detection random_det(Rng& rng, int n_classes) {
  const double w = rng.uniform(0.05, 0.3), h = rng.uniform(0.05, 0.3);
  return det(lesion_from_id(rng.range(0, n_classes - 1)), rng.uniform(w / 2, 1 - w / 2),
             rng.uniform(h / 2, 1 - h / 2), w, h, std::round(rng.uniform() * 10) / 10);
}

}  // namespace

TEST_CASE("iou unit values") {
  const BBox a{0.25, 0.25, 0.5, 0.5};
  const BBox b{0.5, 0.5, 0.5, 0.5};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BBox{0.8, 0.8, 0.2, 0.2}) == 0.0);
  CHECK(std::abs(iou(a, b) - 1.0 / 7.0) <= 1e-12);
  CHECK(std::abs(iou_oracle(a, b) - 0.0625 / 0.4375) <= 1e-15);
  // Touching edges share no area.
  CHECK(iou(BBox{0.25, 0.5, 0.5, 0.5}, BBox{0.75, 0.5, 0.5, 0.5}) == 0.0);
}

TEST_CASE("property: iou is symmetric, bounded and agrees with corner arithmetic") {
  Rng rng(1);
  for (int i = 0; i < 5000; ++i) {
    const auto a = random_det(rng, 1).box;
    const auto b = random_det(rng, 1).box;
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(std::abs(v - iou_oracle(a, b)) < 1e-12);
  }
}

TEST_CASE("matching examples") {
  const auto truth = det(LesionClass::Microaneurysm, 0.5, 0.5, 0.2, 0.2);
  // Shifted by a quarter width: IoU 0.03 / 0.05.
  const auto shifted = det(LesionClass::Microaneurysm, 0.5 + 0.05, 0.5, 0.2, 0.2, 0.9);
  CHECK(iou(shifted.box, truth.box) == doctest::Approx(0.6));
  auto r = match(std::vector{shifted}, std::vector{truth}, 0.5);
  CHECK(r.total() == ClassCounts{1, 0, 0});

  const auto hi = det(LesionClass::Microaneurysm, 0.52, 0.5, 0.2, 0.2, 0.9);
  const auto lo = det(LesionClass::Microaneurysm, 0.5, 0.5, 0.2, 0.2, 0.8);
  r = match(std::vector{lo, hi}, std::vector{truth}, 0.5);
  CHECK(r.total() == ClassCounts{1, 1, 0});
  REQUIRE(r.pairs.size() == 1);
  CHECK(r.pairs[0].detection_index == 1);

  const auto other = det(LesionClass::Hemorrhage, 0.5, 0.5, 0.2, 0.2, 0.9);
  r = match(std::vector{other}, std::vector{truth}, 0.5);
  CHECK(r.total() == ClassCounts{0, 1, 1});
  CHECK(r.per_class[0] == ClassCounts{0, 0, 1});
  CHECK(r.per_class[1] == ClassCounts{0, 1, 0});

  r = match(std::vector<Detection>{}, std::vector<Detection>{}, 0.5);
  CHECK(r.total() == ClassCounts{});
}

TEST_CASE("equal confidences are visited in input order") {
  const auto truth = det(LesionClass::Microaneurysm, 0.5, 0.5, 0.2, 0.2);
  const auto a = det(LesionClass::Microaneurysm, 0.52, 0.5, 0.2, 0.2, 0.5);
  const auto b = det(LesionClass::Microaneurysm, 0.5, 0.5, 0.2, 0.2, 0.5);
  const auto r = match(std::vector{a, b}, std::vector{truth}, 0.5);
  REQUIRE(r.pairs.size() == 1);
  CHECK(r.pairs[0].detection_index == 0);
}

TEST_CASE("property: matching invariants on random inputs") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Detection> dets, truth;
    for (int i = rng.range(0, 8); i > 0; --i) dets.push_back(random_det(rng, 3));
    for (int i = rng.range(0, 8); i > 0; --i) truth.push_back(random_det(rng, 3));
    const double thr = rng.uniform(0.05, 1.0);
    const auto r = match(dets, truth, thr);
    for (int c = 0; c < kLesionClassCount; ++c) {
      const auto cls = lesion_from_id(c);
      const auto n_truth = std::count_if(truth.begin(), truth.end(), [&](auto& d) { return d.lesion == cls; });
      const auto n_det = std::count_if(dets.begin(), dets.end(), [&](auto& d) { return d.lesion == cls; });
      CHECK(r.per_class[c].tp + r.per_class[c].fn == n_truth);
      CHECK(r.per_class[c].tp + r.per_class[c].fp == n_det);
    }
    std::set<std::size_t> t_used, d_used;
    for (const auto& p : r.pairs) {
      CHECK(t_used.insert(p.truth_index).second);
      CHECK(d_used.insert(p.detection_index).second);
      CHECK(p.iou >= thr);
      CHECK(dets[p.detection_index].lesion == truth[p.truth_index].lesion);
    }
    CHECK(r.total().tp == greedy_tp(dets, truth, thr));
  }
}

TEST_CASE("precision, recall and F1") {
  const auto s = prf(ClassCounts{3, 1, 2});
  CHECK(s.precision == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(s.recall == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(s.f1 == doctest::Approx(2 * 0.75 * 0.6 / 1.35).epsilon(1e-15));
  const auto z = prf(ClassCounts{});
  CHECK(z.precision == 0.0);
  CHECK(z.recall == 0.0);
  CHECK(z.f1 == 0.0);
}

TEST_CASE("identity oracle scores exactly 1 and accuracy is tp over all boxes") {
  Rng rng(4);
  MatchResult total;
  for (int img = 0; img < 50; ++img) {
    std::vector<Detection> truth;
    for (int i = rng.range(0, 6); i > 0; --i) truth.push_back(random_det(rng, 7));
    total += match(oracle_detect("i" + std::to_string(img), truth, {}, LesionSet::all()), truth);
  }
  const auto rep = detection_metrics(total);
  CHECK(rep.micro.precision == 1.0);
  CHECK(rep.micro.recall == 1.0);
  CHECK(rep.micro.f1 == 1.0);
  CHECK(rep.accuracy == 1.0);

  MatchResult m;
  m.per_class[0] = {3, 1, 2};
  const auto r2 = detection_metrics(m);
  CHECK(r2.accuracy == doctest::Approx(0.5));
  CHECK(r2.total == ClassCounts{3, 1, 2});
  const auto j = to_json(r2);
  CHECK(j["kind"] == "detection");
  CHECK(j["micro"]["tp"] == 3);
  CHECK(j.contains("reference"));
  CHECK(to_text(r2).find("MICROANEURYSM") != std::string::npos);
}

TEST_CASE("perturbed oracle converges to the expected precision and recall") {
  OraclePerturbation p;
  p.drop_rate = 0.2;
  p.spurious_rate = 0.1;
  p.seed = 5;
  Rng rng(6);
  MatchResult total;
  long long boxes = 0;
  for (int img = 0; boxes < 20000; ++img) {
    // Non-overlapping truth on a grid so each box can only match itself.
    std::vector<Detection> truth;
    for (int gx = 0; gx < 4; ++gx) {
      for (int gy = 0; gy < 4; ++gy) {
        truth.push_back(det(lesion_from_id(rng.range(0, 6)), 0.125 + gx * 0.25, 0.125 + gy * 0.25,
                            0.1, 0.1));
      }
    }
    boxes += static_cast<long long>(truth.size());
    total += match(oracle_detect("p" + std::to_string(img), truth, p, LesionSet::all()), truth);
  }
  const auto rep = detection_metrics(total);
  CHECK(std::abs(rep.micro.recall - 0.8) <= 0.02);
  CHECK(std::abs(rep.micro.precision - 0.8 / 0.9) <= 0.02);
}

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

#include "drscreen/deteval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "drscreen/errors.hpp"

namespace drscreen {

ClassCounts MatchResult::total() const noexcept {
  ClassCounts t;
  for (const auto& c : per_class) t += c;
  return t;
}

MatchResult& MatchResult::operator+=(const MatchResult& o) noexcept {
  for (int i = 0; i < kLesionClassCount; ++i) per_class[i] += o.per_class[i];
  return *this;
}

double iou(const BBox& a, const BBox& b) noexcept {
  const double iw = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double ih = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

MatchResult match(std::span<const Detection> detections, std::span<const Detection> truth,
                  double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw DomainError("iou_threshold must be in (0,1]");
  }
  MatchResult r;
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].confidence > detections[b].confidence;
  });

  std::vector<bool> claimed(truth.size(), false);
  for (auto di : order) {
    const auto& d = detections[di];
    std::size_t best = truth.size();
    double best_iou = -1.0;
    for (std::size_t ti = 0; ti < truth.size(); ++ti) {
      if (claimed[ti] || truth[ti].lesion != d.lesion) continue;
      const double v = iou(d.box, truth[ti].box);
      if (v >= iou_threshold && v > best_iou) {
        best = ti;
        best_iou = v;
      }
    }
    auto& counts = r.per_class[lesion_id(d.lesion)];
    if (best < truth.size()) {
      claimed[best] = true;
      ++counts.tp;
      r.pairs.push_back({di, best, best_iou});
    } else {
      ++counts.fp;
    }
  }
  for (std::size_t ti = 0; ti < truth.size(); ++ti) {
    if (!claimed[ti]) ++r.per_class[lesion_id(truth[ti].lesion)].fn;
  }
  return r;
}

PrfScores prf(const ClassCounts& c) noexcept {
  PrfScores s;
  const auto ratio = [](long long num, long long den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  s.precision = ratio(c.tp, c.tp + c.fp);
  s.recall = ratio(c.tp, c.tp + c.fn);
  s.f1 = (s.precision + s.recall) == 0.0
             ? 0.0
             : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

DetectionReport detection_metrics(const MatchResult& result, double iou_threshold) {
  DetectionReport r;
  r.iou_threshold = iou_threshold;
  r.counts = result.per_class;
  for (int i = 0; i < kLesionClassCount; ++i) r.per_class[i] = prf(result.per_class[i]);
  r.total = result.total();
  r.micro = prf(r.total);
  const long long all = r.total.tp + r.total.fp + r.total.fn;
  r.accuracy = all == 0 ? 0.0 : static_cast<double>(r.total.tp) / static_cast<double>(all);
  return r;
}

namespace {

nlohmann::ordered_json scores_json(const ClassCounts& c, const PrfScores& s) {
  nlohmann::ordered_json j;
  j["tp"] = c.tp;
  j["fp"] = c.fp;
  j["fn"] = c.fn;
  j["precision"] = s.precision;
  j["recall"] = s.recall;
  j["f1"] = s.f1;
  return j;
}

}  // namespace

nlohmann::json to_json(const DetectionReport& r) {
  nlohmann::ordered_json j;
  j["kind"] = "detection";
  j["iou_threshold"] = r.iou_threshold;
  j["micro"] = scores_json(r.total, r.micro);
  j["accuracy"] = r.accuracy;
  nlohmann::ordered_json per;
  for (auto c : kAllLesionClasses) {
    per[std::string(lesion_name(c))] = scores_json(r.counts[lesion_id(c)], r.per_class[lesion_id(c)]);
  }
  j["per_class"] = per;
  j["reference"] = {{"accuracy", ReferenceScores::kDetectorAccuracy},
                    {"f1", ReferenceScores::kDetectorF1},
                    {"precision", ReferenceScores::kDetectorPrecision},
                    {"note", "published detector scores on fundus photographs; not reproduced"}};
  return nlohmann::json(j);
}

std::string to_text(const DetectionReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "Detection report (IoU >= %.2f)\n", r.iou_threshold);
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-16s %7s %7s %7s %9s %9s %9s\n", "class", "tp", "fp", "fn",
                "precision", "recall", "f1");
  out += buf;
  for (auto c : kAllLesionClasses) {
    const auto& k = r.counts[lesion_id(c)];
    const auto& s = r.per_class[lesion_id(c)];
    std::snprintf(buf, sizeof(buf), "%-16s %7lld %7lld %7lld %9.4f %9.4f %9.4f\n",
                  std::string(lesion_name(c)).c_str(), k.tp, k.fp, k.fn, s.precision, s.recall,
                  s.f1);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-16s %7lld %7lld %7lld %9.4f %9.4f %9.4f\n", "micro",
                r.total.tp, r.total.fp, r.total.fn, r.micro.precision, r.micro.recall, r.micro.f1);
  out += buf;
  std::snprintf(buf, sizeof(buf), "accuracy (tp/(tp+fp+fn)): %.4f\n", r.accuracy);
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "reference (published detector, not reproduced): accuracy %.2f, F1 %.2f, "
                "precision %.2f\n",
                ReferenceScores::kDetectorAccuracy, ReferenceScores::kDetectorF1,
                ReferenceScores::kDetectorPrecision);
  out += buf;
  return out;
}

}  // namespace drscreen

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
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drscreen/domain.hpp"

namespace drscreen {

inline constexpr double kDefaultIouThreshold = 0.5;

struct ClassCounts {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;

  ClassCounts& operator+=(const ClassCounts& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct MatchedPair {
  std::size_t detection_index = 0;  // into the detection list
  std::size_t truth_index = 0;      // into the truth list
  double iou = 0.0;
};

/// Per-class outcome of matching one image (or the sum over many). For each
/// class tp + fn equals the truth count and tp + fp the detection count.
struct MatchResult {
  std::array<ClassCounts, kLesionClassCount> per_class{};
  std::vector<MatchedPair> pairs;  // only meaningful for a single image

  ClassCounts total() const noexcept;
  /// Adds counts; pairs are not merged.
  MatchResult& operator+=(const MatchResult& o) noexcept;
};

/// Intersection over union of two boxes, in [0,1].
double iou(const BBox& a, const BBox& b) noexcept;

/// Greedy class-wise matching. Detections are visited by descending
/// confidence (ties in input order); each claims the unmatched truth box of
/// its class with the highest IoU >= iou_threshold (ties to the lower truth
/// index).
MatchResult match(std::span<const Detection> detections, std::span<const Detection> truth,
                  double iou_threshold = kDefaultIouThreshold);

struct PrfScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2PR/(P+R); each 0 on a zero
/// denominator.
PrfScores prf(const ClassCounts& c) noexcept;

/// Detection quality. `accuracy` is tp / (tp + fp + fn), the share of all
/// boxes (detected or missed) that were correctly found.
struct DetectionReport {
  std::array<ClassCounts, kLesionClassCount> counts{};
  std::array<PrfScores, kLesionClassCount> per_class{};
  ClassCounts total;
  PrfScores micro;
  double accuracy = 0.0;
  double iou_threshold = kDefaultIouThreshold;
};

DetectionReport detection_metrics(const MatchResult& result,
                                  double iou_threshold = kDefaultIouThreshold);

/// Machine-readable form:
///   { "kind": "detection", "iou_threshold", "micro": {tp,fp,fn,precision,
///     recall,f1}, "accuracy", "per_class": {<NAME>: {...}},
///     "reference": {accuracy, f1, precision} }
nlohmann::json to_json(const DetectionReport& report);
std::string to_text(const DetectionReport& report);

}  // namespace drscreen

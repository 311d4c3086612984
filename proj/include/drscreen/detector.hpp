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

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drscreen/augment.hpp"
#include "drscreen/dataset_io.hpp"

namespace drscreen {

enum class DetectorMode { External, Oracle };

/// Controlled errors for the oracle detector.
///
/// Each truth box is dropped with probability `drop_rate`; a kept box is
/// jittered by uniform noise of amplitude jitter*w on cx and w (jitter*h on
/// cy and h) and clipped. Independently, with probability `spurious_rate` a
/// box of a random active class is added at a location that does not touch
/// any truth box. Every draw is seeded from (seed, image id, box), so the
/// output does not depend on the order of the truth list.
struct OraclePerturbation {
  double drop_rate = 0.0;
  double spurious_rate = 0.0;
  double jitter = 0.0;
  std::uint64_t seed = 42;

  bool is_identity() const noexcept {
    return drop_rate == 0.0 && spurious_rate == 0.0 && jitter == 0.0;
  }
  void validate() const;
};

/// Detector settings.
///
/// External mode runs `external_command` once per batch. Each argument may
/// contain the placeholders {input_dir} (images named <image_id>.<ext>),
/// {output_dir} (where the tool must write <image_id>.txt files with lines
/// `class cx cy w h conf`) and {conf} (the confidence threshold).
struct DetectorConfig {
  DetectorMode mode = DetectorMode::Oracle;
  std::vector<std::string> external_command;
  double confidence_threshold = 0.25;
  LesionSet class_subset = LesionSet::all();
  OraclePerturbation perturbation;
  /// Oracle mode: where `<image_id>.txt` truth files are looked up when a
  /// request carries no truth.
  fs::path truth_dir;
  /// External mode: parent of the per-call exchange directories. Defaults to
  /// the system temp directory.
  fs::path exchange_dir;

  void validate() const;
};

DetectorConfig detector_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DetectorConfig& config);
DetectorConfig load_detector_config(const fs::path& path);

struct DetectInput {
  std::string image_id;
  fs::path image_path;                          // external mode
  std::optional<std::vector<Detection>> truth;  // oracle mode
};

/// Detections with confidence >= threshold and class within the subset.
std::vector<Detection> detect(const DetectInput& input, const DetectorConfig& config);
/// Same as detect() for many images; external mode makes one tool call.
AnnotationMap detect_batch(std::span<const DetectInput> inputs, const DetectorConfig& config);

/// Oracle detector on its own (no threshold or subset filtering beyond what
/// the perturbation needs).
std::vector<Detection> oracle_detect(std::string_view image_id, std::span<const Detection> truth,
                                     const OraclePerturbation& perturbation,
                                     const LesionSet& class_subset,
                                     double min_spurious_confidence = 0.0);

/// Reads the 6-field `<id>.txt` files in `dir`. An expected id without a file
/// maps to no detections; when `expected_ids` is empty every file is read.
AnnotationMap parse_detection_output(const fs::path& dir,
                                     std::span<const std::string> expected_ids = {});

struct BundleOptions {
  bool augment = false;
  std::uint64_t seed = 42;
  double val_fraction = 0.2;
  std::vector<AugmentOp> augmentations = default_augmentations();
};

/// Writes a YOLO-style training layout under `out_dir`:
///   images/{train,val}/<id>.png, labels/{train,val}/<id>.txt (5-field),
///   train.txt, val.txt (relative image paths) and data.yaml.
/// Augmented variants (`<id>__<tag>.png`) are added to train only.
/// Returns the data.yaml path.
fs::path prepare_training_bundle(const Dataset& dataset, const fs::path& out_dir,
                                 const BundleOptions& options = {});

}  // namespace drscreen

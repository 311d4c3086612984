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
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drscreen/domain.hpp"

namespace drscreen {

namespace fs = std::filesystem;

using AnnotationMap = std::map<std::string, std::vector<Detection>>;

/// Graded records plus ground-truth boxes (confidence 1.0) and where the
/// images live. Every annotation key names a record.
struct Dataset {
  std::vector<GradedRecord> records;
  AnnotationMap annotations;
  fs::path image_dir;
  LesionSet class_subset = LesionSet::all();

  /// First existing `<image_dir>/<id>.{png,jpg,jpeg}`; the .png path if none.
  fs::path image_path(std::string_view image_id) const;
  const GradedRecord* find(std::string_view image_id) const;
};

struct SplitSpec {
  double test_fraction = 0.2;
  std::uint64_t seed = 42;
  bool stratified = true;
};

struct Split {
  std::vector<GradedRecord> train;
  std::vector<GradedRecord> test;
};

// ---- label tables (`image,level`) ----

std::vector<GradedRecord> load_labels(const fs::path& path);
std::vector<GradedRecord> parse_labels(std::string_view text, std::string_view source);
void write_labels(std::span<const GradedRecord> records, const fs::path& path);

// ---- annotation files (`class cx cy w h[ conf]`) ----

struct AnnotationParseOptions {
  /// Require the 6th (confidence) field on every line.
  bool require_confidence = false;
};

std::vector<Detection> read_annotation_file(const fs::path& path, std::string_view image_id,
                                            AnnotationParseOptions options = {});
/// `source` prefixes error messages ("<source>:<line>: ...").
std::vector<Detection> parse_annotations(std::string_view text, std::string_view source,
                                         AnnotationParseOptions options = {});
/// One LF-terminated line per detection, six fractional digits.
std::string format_annotations(std::span<const Detection> detections, bool include_confidence);
void write_annotation_file(std::span<const Detection> detections, const fs::path& path,
                           bool include_confidence);

// ---- splits ----

/// Deterministic per seed. Partition members keep their input order.
Split stratified_split(std::span<const GradedRecord> records, const SplitSpec& options);

// ---- dataset manifest ----

/// JSON document describing a dataset on disk. Relative paths resolve against
/// the manifest's directory.
///
///   {
///     "schema": "drscreen.dataset/1",
///     "image_dir": "images",
///     "labels": "labels.csv",
///     "annotation_dir": "labels",
///     "class_subset": ["MICROANEURYSM", ...]
///   }
struct DatasetManifest {
  fs::path image_dir;
  fs::path labels;
  fs::path annotation_dir;  // empty when the dataset has no annotations
  LesionSet class_subset = LesionSet::all();
};

inline constexpr std::string_view kManifestSchema = "drscreen.dataset/1";
inline constexpr std::string_view kManifestFileName = "manifest.json";

/// Accepts the manifest file, its directory, or the path without ".json".
fs::path resolve_manifest_path(const fs::path& path);
/// Paths in the result are absolute.
DatasetManifest load_manifest(const fs::path& path);
void write_manifest(const DatasetManifest& manifest, const fs::path& path);
/// Loads labels and every `<annotation_dir>/<id>.txt` that exists.
Dataset load_dataset(const fs::path& manifest_path);

/// Reads the whole file; throws IoError.
std::string read_text_file(const fs::path& path);
/// Writes via a temporary file and rename; throws IoError.
void write_text_file(const fs::path& path, std::string_view contents);

}  // namespace drscreen

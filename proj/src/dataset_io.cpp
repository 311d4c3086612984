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

#include "drscreen/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "drscreen/errors.hpp"
#include "drscreen/rng.hpp"

namespace drscreen {
namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

template <class F>
void for_each_line(std::string_view text, F&& fn) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    fn(line_no, text.substr(start, end - start));
    start = end + 1;
  }
}

bool parse_double(std::string_view s, double& out) {
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

bool parse_int(std::string_view s, long long& out) {
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::string location(std::string_view source, std::size_t line) {
  return std::string(source) + ":" + std::to_string(line) + ": ";
}

}  // namespace

fs::path Dataset::image_path(std::string_view image_id) const {
  const std::string id(image_id);
  for (const char* ext : {".png", ".jpg", ".jpeg"}) {
    auto p = image_dir / (id + ext);
    if (fs::exists(p)) return p;
  }
  return image_dir / (id + ".png");
}

const GradedRecord* Dataset::find(std::string_view image_id) const {
  for (const auto& r : records) {
    if (r.image_id == image_id) return &r;
  }
  return nullptr;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, std::string_view contents) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename into '" + path.string() + "': " + ec.message());
}

// ---- labels ----

std::vector<GradedRecord> parse_labels(std::string_view text, std::string_view source) {
  std::vector<GradedRecord> records;
  std::set<std::string, std::less<>> seen;
  int image_col = -1;
  int level_col = -1;
  std::size_t n_cols = 0;
  bool header_done = false;

  for_each_line(text, [&](std::size_t line_no, std::string_view raw) {
    auto line = trim(raw);
    if (!header_done) {
      if (line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
      auto cols = split_on(line, ',');
      n_cols = cols.size();
      for (std::size_t i = 0; i < cols.size(); ++i) {
        auto name = trim(cols[i]);
        if (name == "image") image_col = static_cast<int>(i);
        if (name == "level") level_col = static_cast<int>(i);
      }
      if (image_col < 0) throw LoadError(location(source, line_no) + "missing column 'image'");
      if (level_col < 0) throw LoadError(location(source, line_no) + "missing column 'level'");
      header_done = true;
      return;
    }
    if (line.empty()) return;
    auto cols = split_on(line, ',');
    if (cols.size() != n_cols) {
      throw LoadError(location(source, line_no) + "expected " + std::to_string(n_cols) +
                      " columns, found " + std::to_string(cols.size()));
    }
    auto id = trim(cols[static_cast<std::size_t>(image_col)]);
    auto level_text = trim(cols[static_cast<std::size_t>(level_col)]);
    if (id.empty()) throw LoadError(location(source, line_no) + "empty image id");
    long long level = 0;
    if (!parse_int(level_text, level)) {
      throw LoadError(location(source, line_no) + "unparsable level '" +
                      std::string(level_text) + "'");
    }
    DrGrade grade;
    try {
      grade = grade_from_int(level);
    } catch (const DomainError& e) {
      throw LoadError(location(source, line_no) + e.what());
    }
    if (!seen.emplace(id).second) {
      throw LoadError(location(source, line_no) + "duplicate image id '" + std::string(id) + "'");
    }
    records.push_back(GradedRecord::make(std::string(id), grade));
  });
  if (!header_done) throw LoadError(std::string(source) + ": missing header row");
  return records;
}

std::vector<GradedRecord> load_labels(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw LoadError(e.what());
  }
  return parse_labels(text, path.string());
}

void write_labels(std::span<const GradedRecord> records, const fs::path& path) {
  std::string out = "image,level\n";
  for (const auto& r : records) {
    out += r.image_id;
    out += ',';
    out += std::to_string(grade_id(r.grade));
    out += '\n';
  }
  write_text_file(path, out);
}

// ---- annotations ----

std::vector<Detection> parse_annotations(std::string_view text, std::string_view source,
                                         AnnotationParseOptions options) {
  std::vector<Detection> out;
  for_each_line(text, [&](std::size_t line_no, std::string_view raw) {
    auto line = trim(raw);
    if (line.empty()) return;
    auto fields = split_whitespace(line);
    const bool five = fields.size() == 5 && !options.require_confidence;
    if (!five && fields.size() != 6) {
      throw ParseError(location(source, line_no) + "expected " +
                       (options.require_confidence ? "6" : "5 or 6") + " fields, found " +
                       std::to_string(fields.size()));
    }
    long long cls = 0;
    if (!parse_int(fields[0], cls) || cls < 0 || cls >= kLesionClassCount) {
      throw ParseError(location(source, line_no) + "class id '" + std::string(fields[0]) +
                       "' is not in 0..6");
    }
    double v[5] = {0.0, 0.0, 0.0, 0.0, 1.0};
    static constexpr const char* kNames[] = {"cx", "cy", "w", "h", "confidence"};
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (!parse_double(fields[i], v[i - 1])) {
        throw ParseError(location(source, line_no) + "unparsable " + kNames[i - 1] + " '" +
                         std::string(fields[i]) + "'");
      }
      if (v[i - 1] < 0.0 || v[i - 1] > 1.0) {
        throw ParseError(location(source, line_no) + kNames[i - 1] + " " +
                         std::string(fields[i]) + " is outside [0,1]");
      }
    }
    if (v[2] <= 0.0 || v[3] <= 0.0) {
      throw ParseError(location(source, line_no) + "box width and height must be positive");
    }
    out.push_back(Detection{static_cast<LesionClass>(cls), BBox{v[0], v[1], v[2], v[3]}, v[4]});
  });
  return out;
}

std::vector<Detection> read_annotation_file(const fs::path& path, std::string_view image_id,
                                            AnnotationParseOptions options) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw ParseError(std::string(image_id) + ": " + e.what());
  }
  return parse_annotations(text, path.string(), options);
}

std::string format_annotations(std::span<const Detection> detections, bool include_confidence) {
  std::string out;
  char buf[160];
  for (const auto& d : detections) {
    int n = std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f", lesion_id(d.lesion),
                          d.box.cx, d.box.cy, d.box.w, d.box.h);
    out.append(buf, static_cast<std::size_t>(n));
    if (include_confidence) {
      n = std::snprintf(buf, sizeof(buf), " %.6f", d.confidence);
      out.append(buf, static_cast<std::size_t>(n));
    }
    out += '\n';
  }
  return out;
}

void write_annotation_file(std::span<const Detection> detections, const fs::path& path,
                           bool include_confidence) {
  write_text_file(path, format_annotations(detections, include_confidence));
}

// ---- split ----

Split stratified_split(std::span<const GradedRecord> records, const SplitSpec& options) {
  if (records.empty()) throw SplitError("cannot split an empty record list");
  if (!(options.test_fraction > 0.0 && options.test_fraction < 1.0)) {
    throw SplitError("test_fraction must be in (0,1)");
  }
  Rng rng(options.seed);
  std::vector<bool> in_test(records.size(), false);

  if (options.stratified) {
    for (int g = 0; g < kGradeCount; ++g) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < records.size(); ++i) {
        if (grade_id(records[i].grade) == g) idx.push_back(i);
      }
      if (idx.empty()) continue;
      const auto n_test =
          static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * options.test_fraction));
      if (n_test < 1 || n_test >= idx.size()) {
        throw SplitError("grade " + std::string(grade_name(static_cast<DrGrade>(g))) + " has " +
                         std::to_string(idx.size()) +
                         " samples, too few to appear in both partitions");
      }
      rng.shuffle(idx);
      for (std::size_t k = 0; k < n_test; ++k) in_test[idx[k]] = true;
    }
  } else {
    std::vector<std::size_t> idx(records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto n_test = static_cast<std::size_t>(
        std::llround(static_cast<double>(records.size()) * options.test_fraction));
    rng.shuffle(idx);
    for (std::size_t k = 0; k < n_test; ++k) in_test[idx[k]] = true;
  }

  Split split;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (in_test[i] ? split.test : split.train).push_back(records[i]);
  }
  return split;
}

// ---- manifest ----

fs::path resolve_manifest_path(const fs::path& path) {
  if (fs::is_directory(path)) return path / kManifestFileName;
  if (fs::exists(path)) return path;
  auto with_ext = path;
  with_ext += ".json";
  if (fs::exists(with_ext)) return with_ext;
  return path;
}

DatasetManifest load_manifest(const fs::path& path) {
  const auto file = resolve_manifest_path(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(file));
  } catch (const IoError& e) {
    throw LoadError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(file.string() + ": " + e.what());
  }
  const auto base = fs::absolute(file).parent_path();
  const auto get_path = [&](const char* key, bool required) -> fs::path {
    if (!j.contains(key)) {
      if (required) throw LoadError(file.string() + ": missing field '" + key + "'");
      return {};
    }
    if (!j[key].is_string()) throw LoadError(file.string() + ": field '" + key + "' must be a string");
    fs::path p = j[key].get<std::string>();
    return p.is_absolute() ? p : (base / p).lexically_normal();
  };
  if (j.value("schema", std::string()) != kManifestSchema) {
    throw LoadError(file.string() + ": field 'schema' must be \"" + std::string(kManifestSchema) +
                    "\"");
  }
  DatasetManifest m;
  m.image_dir = get_path("image_dir", true);
  m.labels = get_path("labels", true);
  m.annotation_dir = get_path("annotation_dir", false);
  if (j.contains("class_subset")) {
    LesionSet subset;
    try {
      for (const auto& name : j.at("class_subset")) subset.insert(lesion_from_name(name.get<std::string>()));
    } catch (const std::exception& e) {
      throw LoadError(file.string() + ": field 'class_subset': " + e.what());
    }
    if (subset.empty()) throw LoadError(file.string() + ": field 'class_subset' is empty");
    m.class_subset = subset;
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  const auto base = fs::absolute(path).parent_path();
  const auto rel = [&](const fs::path& p) {
    return p.is_absolute() ? p.lexically_relative(base).generic_string() : p.generic_string();
  };
  nlohmann::ordered_json j;
  j["schema"] = kManifestSchema;
  j["image_dir"] = rel(manifest.image_dir);
  j["labels"] = rel(manifest.labels);
  if (!manifest.annotation_dir.empty()) j["annotation_dir"] = rel(manifest.annotation_dir);
  auto names = nlohmann::ordered_json::array();
  for (auto c : manifest.class_subset.classes()) names.push_back(lesion_name(c));
  j["class_subset"] = names;
  write_text_file(path, j.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& manifest_path) {
  const auto m = load_manifest(manifest_path);
  Dataset ds;
  ds.records = load_labels(m.labels);
  ds.image_dir = m.image_dir;
  ds.class_subset = m.class_subset;
  if (!m.annotation_dir.empty()) {
    for (const auto& r : ds.records) {
      auto p = m.annotation_dir / (r.image_id + ".txt");
      if (fs::exists(p)) ds.annotations.emplace(r.image_id, read_annotation_file(p, r.image_id));
    }
  }
  return ds;
}

}  // namespace drscreen

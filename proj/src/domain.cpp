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

#include "drscreen/domain.hpp"

#include <algorithm>
#include <cctype>

#include "drscreen/errors.hpp"

namespace drscreen {
namespace {

constexpr std::array<std::string_view, kLesionClassCount> kLesionNames = {
    "MICROANEURYSM", "HEMORRHAGE", "HARD_EXUDATE",  "SOFT_EXUDATE",
    "IRMA",          "VENOUS_BEADING", "PROLIFERATIVE",
};

constexpr std::array<std::string_view, kLesionClassCount> kLesionShortNames = {
    "ma", "hem", "he", "se", "irma", "vb", "prolif",
};

constexpr std::array<std::string_view, kGradeCount> kGradeNames = {
    "NO_DR", "MILD", "MODERATE", "SEVERE", "PROLIFERATIVE_DR",
};

constexpr std::array<std::string_view, kGradeCount> kGradeDisplayNames = {
    "No DR", "Mild DR", "Moderate DR", "Severe DR", "Proliferative DR",
};

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

LesionClass lesion_from_id(int id) {
  if (id < 0 || id >= kLesionClassCount) {
    throw DomainError("lesion class id " + std::to_string(id) + " is outside 0..6");
  }
  return static_cast<LesionClass>(id);
}

std::string_view lesion_name(LesionClass c) noexcept { return kLesionNames[lesion_id(c)]; }

std::string_view lesion_short_name(LesionClass c) noexcept {
  return kLesionShortNames[lesion_id(c)];
}

LesionClass lesion_from_name(std::string_view name) {
  for (int i = 0; i < kLesionClassCount; ++i) {
    if (iequals(name, kLesionNames[i]) || iequals(name, kLesionShortNames[i])) {
      return static_cast<LesionClass>(i);
    }
  }
  throw DomainError("unknown lesion class '" + std::string(name) + "'");
}

LesionSet::LesionSet(const std::vector<LesionClass>& classes) {
  for (auto c : classes) insert(c);
}

LesionSet LesionSet::all() {
  LesionSet s;
  s.bits_.set();
  return s;
}

std::vector<LesionClass> LesionSet::classes() const {
  std::vector<LesionClass> out;
  for (auto c : kAllLesionClasses) {
    if (contains(c)) out.push_back(c);
  }
  return out;
}

std::optional<std::size_t> LesionSet::index_of(LesionClass c) const noexcept {
  if (!contains(c)) return std::nullopt;
  std::size_t idx = 0;
  for (int i = 0; i < lesion_id(c); ++i) {
    if (bits_.test(i)) ++idx;
  }
  return idx;
}

DrGrade grade_from_int(long long v) {
  if (v < 0 || v >= kGradeCount) {
    throw DomainError("grade " + std::to_string(v) + " is outside 0..4");
  }
  return static_cast<DrGrade>(v);
}

std::string_view grade_name(DrGrade g) noexcept { return kGradeNames[grade_id(g)]; }

std::string_view grade_display_name(DrGrade g) noexcept {
  return kGradeDisplayNames[grade_id(g)];
}

DrGrade severity_max(DrGrade a, DrGrade b) noexcept { return grade_id(a) >= grade_id(b) ? a : b; }

bool BBox::is_valid() const noexcept {
  return cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 && w <= 1.0 && h > 0.0 &&
         h <= 1.0;
}

BBox BBox::from_corners(double x0, double y0, double x1, double y1) noexcept {
  return BBox{(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0};
}

std::optional<BBox> clip_to_unit(const BBox& b) noexcept {
  const double x0 = std::max(0.0, b.x_min());
  const double y0 = std::max(0.0, b.y_min());
  const double x1 = std::min(1.0, b.x_max());
  const double y1 = std::min(1.0, b.y_max());
  if (!(x1 > x0) || !(y1 > y0)) return std::nullopt;
  // Already inside the unit square: returned untouched.
  if (x0 == b.x_min() && x1 == b.x_max() && y0 == b.y_min() && y1 == b.y_max()) return b;
  return BBox::from_corners(x0, y0, x1, y1);
}

Laterality laterality_from_id(std::string_view image_id) noexcept {
  if (ends_with(image_id, "_left")) return Laterality::Left;
  if (ends_with(image_id, "_right")) return Laterality::Right;
  return Laterality::Unknown;
}

std::string_view laterality_name(Laterality l) noexcept {
  switch (l) {
    case Laterality::Left:
      return "LEFT";
    case Laterality::Right:
      return "RIGHT";
    case Laterality::Unknown:
      break;
  }
  return "UNKNOWN";
}

GradedRecord GradedRecord::make(std::string image_id, DrGrade grade) {
  GradedRecord r;
  r.laterality = laterality_from_id(image_id);
  r.image_id = std::move(image_id);
  r.grade = grade;
  return r;
}

}  // namespace drscreen

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
#include <bitset>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace drscreen {

// Lesion taxonomy. Ids are fixed and shared by annotation files, feature
// columns and model files; a dataset may use a subset but never renumbers.
enum class LesionClass : std::uint8_t {
  Microaneurysm = 0,
  Hemorrhage = 1,
  HardExudate = 2,
  SoftExudate = 3,
  Irma = 4,
  VenousBeading = 5,
  Proliferative = 6,
};

inline constexpr int kLesionClassCount = 7;

inline constexpr std::array<LesionClass, kLesionClassCount> kAllLesionClasses = {
    LesionClass::Microaneurysm, LesionClass::Hemorrhage,    LesionClass::HardExudate,
    LesionClass::SoftExudate,   LesionClass::Irma,          LesionClass::VenousBeading,
    LesionClass::Proliferative,
};

constexpr int lesion_id(LesionClass c) noexcept { return static_cast<int>(c); }

LesionClass lesion_from_id(int id);
/// Canonical upper-case name, e.g. "MICROANEURYSM".
std::string_view lesion_name(LesionClass c) noexcept;
/// Short column name used in count tables, e.g. "ma".
std::string_view lesion_short_name(LesionClass c) noexcept;
/// Accepts the canonical name or the short name (case-insensitive).
LesionClass lesion_from_name(std::string_view name);

/// Set of active lesion classes, iterated in id order.
class LesionSet {
 public:
  LesionSet() = default;
  explicit LesionSet(const std::vector<LesionClass>& classes);

  static LesionSet all();

  bool contains(LesionClass c) const noexcept { return bits_.test(lesion_id(c)); }
  void insert(LesionClass c) noexcept { bits_.set(lesion_id(c)); }
  bool empty() const noexcept { return bits_.none(); }
  std::size_t size() const noexcept { return bits_.count(); }
  std::vector<LesionClass> classes() const;
  /// Position of `c` among the active classes, or nullopt when inactive.
  std::optional<std::size_t> index_of(LesionClass c) const noexcept;

  friend bool operator==(const LesionSet&, const LesionSet&) = default;

 private:
  std::bitset<kLesionClassCount> bits_;
};

// Five-level severity scale, ordered.
enum class DrGrade : std::uint8_t {
  NoDr = 0,
  Mild = 1,
  Moderate = 2,
  Severe = 3,
  ProliferativeDr = 4,
};

inline constexpr int kGradeCount = 5;

constexpr int grade_id(DrGrade g) noexcept { return static_cast<int>(g); }

/// Throws DomainError naming `v` when it is not in 0..4.
DrGrade grade_from_int(long long v);
std::string_view grade_name(DrGrade g) noexcept;          // "NO_DR"
std::string_view grade_display_name(DrGrade g) noexcept;  // "No DR"
DrGrade severity_max(DrGrade a, DrGrade b) noexcept;

/// Axis-aligned box in center format, every field a fraction of image size.
struct BBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  double x_min() const noexcept { return cx - w / 2.0; }
  double x_max() const noexcept { return cx + w / 2.0; }
  double y_min() const noexcept { return cy - h / 2.0; }
  double y_max() const noexcept { return cy + h / 2.0; }
  double area() const noexcept { return w * h; }

  /// 0 <= cx,cy <= 1, 0 < w,h <= 1.
  bool is_valid() const noexcept;

  static BBox from_corners(double x0, double y0, double x1, double y1) noexcept;

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Intersection of `b` with the unit square, nullopt when it is empty.
std::optional<BBox> clip_to_unit(const BBox& b) noexcept;

struct Detection {
  LesionClass lesion = LesionClass::Microaneurysm;
  BBox box;
  double confidence = 1.0;  // exactly 1.0 for ground truth

  friend bool operator==(const Detection&, const Detection&) = default;
};

enum class Laterality : std::uint8_t { Left, Right, Unknown };

/// "_left" / "_right" image id suffixes; anything else is Unknown.
Laterality laterality_from_id(std::string_view image_id) noexcept;
std::string_view laterality_name(Laterality l) noexcept;

struct GradedRecord {
  std::string image_id;
  DrGrade grade = DrGrade::NoDr;
  Laterality laterality = Laterality::Unknown;

  static GradedRecord make(std::string image_id, DrGrade grade);

  friend bool operator==(const GradedRecord&, const GradedRecord&) = default;
};

/// Reference scores reported by the published system. Reported alongside our
/// own metrics for context; never asserted.
struct ReferenceScores {
  static constexpr double kSvmTrainAccuracy = 0.91;
  static constexpr double kSvmTestAccuracy = 0.84;
  static constexpr double kSvmF1 = 0.81;
  static constexpr double kSvmPrecision = 0.82;
  static constexpr double kDetectorAccuracy = 0.78;
  static constexpr double kDetectorF1 = 0.74;
  static constexpr double kDetectorPrecision = 0.72;
};

}  // namespace drscreen

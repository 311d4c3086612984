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

#include "drscreen/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "drscreen/errors.hpp"

namespace drscreen {
namespace {

constexpr double kDiscRadius = 0.46;
constexpr double kGap = 0.004;

struct LesionStyle {
  double min_w, max_w;
  double min_aspect, max_aspect;  // h / w
  cv::Scalar color;               // BGR
};

LesionStyle style_of(LesionClass c) {
  switch (c) {
    case LesionClass::Microaneurysm:
      return {0.020, 0.034, 0.9, 1.1, cv::Scalar(40, 40, 205)};
    case LesionClass::Hemorrhage:
      return {0.035, 0.060, 0.7, 1.3, cv::Scalar(25, 20, 135)};
    case LesionClass::HardExudate:
      return {0.030, 0.055, 0.6, 1.4, cv::Scalar(90, 215, 240)};
    case LesionClass::SoftExudate:
      return {0.040, 0.070, 0.7, 1.2, cv::Scalar(230, 235, 235)};
    case LesionClass::Irma:
      return {0.060, 0.085, 0.8, 1.2, cv::Scalar(70, 110, 215)};
    case LesionClass::VenousBeading:
      return {0.045, 0.060, 1.6, 2.2, cv::Scalar(60, 40, 95)};
    case LesionClass::Proliferative:
      return {0.090, 0.120, 0.8, 1.2, cv::Scalar(140, 140, 250)};
  }
  return {0.02, 0.03, 1.0, 1.0, cv::Scalar(255, 255, 255)};
}

bool inside_disc(const BBox& b) {
  for (double x : {b.x_min(), b.x_max()}) {
    for (double y : {b.y_min(), b.y_max()}) {
      const double dx = x - 0.5;
      const double dy = y - 0.5;
      if (dx * dx + dy * dy > kDiscRadius * kDiscRadius) return false;
    }
  }
  return true;
}

bool overlaps(const BBox& a, const BBox& b) {
  return a.x_min() < b.x_max() + kGap && b.x_min() < a.x_max() + kGap &&
         a.y_min() < b.y_max() + kGap && b.y_min() < a.y_max() + kGap;
}

// Rounds to the 6-decimal annotation grid.
double snap(double v) { return std::round(v * 1e6) / 1e6; }

std::vector<Detection> place_lesions(const LesionCounts& counts, Rng& rng, int max_retries,
                                     const std::string& image_id) {
  // Largest classes first so the packing rarely fails.
  std::vector<LesionClass> order;
  for (int c = kLesionClassCount - 1; c >= 0; --c) {
    for (int k = 0; k < counts[c]; ++k) order.push_back(static_cast<LesionClass>(c));
  }
  std::vector<Detection> placed;
  for (auto cls : order) {
    const auto st = style_of(cls);
    bool ok = false;
    for (int attempt = 0; attempt < max_retries && !ok; ++attempt) {
      const double w = rng.uniform(st.min_w, st.max_w);
      const double h = w * rng.uniform(st.min_aspect, st.max_aspect);
      BBox b{snap(rng.uniform(0.5 - kDiscRadius, 0.5 + kDiscRadius)),
             snap(rng.uniform(0.5 - kDiscRadius, 0.5 + kDiscRadius)), snap(w), snap(h)};
      if (!inside_disc(b)) continue;
      if (std::any_of(placed.begin(), placed.end(),
                      [&](const Detection& d) { return overlaps(d.box, b); })) {
        continue;
      }
      placed.push_back(Detection{cls, b, 1.0});
      ok = true;
    }
    if (!ok) {
      throw GenerationError("could not place a " + std::string(lesion_name(cls)) + " lesion in '" +
                            image_id + "' without overlap after " + std::to_string(max_retries) +
                            " attempts");
    }
  }
  std::stable_sort(placed.begin(), placed.end(), [](const Detection& a, const Detection& b) {
    return lesion_id(a.lesion) < lesion_id(b.lesion);
  });
  return placed;
}

cv::Mat render(const std::vector<Detection>& lesions, int size) {
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(0, 0, 0));
  const cv::Point center(size / 2, size / 2);
  cv::circle(img, center, static_cast<int>(std::lround(kDiscRadius * size)),
             cv::Scalar(25, 55, 115), cv::FILLED, cv::LINE_8);
  for (const auto& d : lesions) {
    const auto st = style_of(d.lesion);
    const cv::Point c(static_cast<int>(std::lround(d.box.cx * size)),
                      static_cast<int>(std::lround(d.box.cy * size)));
    const cv::Size axes(std::max(1, static_cast<int>(std::lround(d.box.w * size / 2.0))),
                        std::max(1, static_cast<int>(std::lround(d.box.h * size / 2.0))));
    cv::ellipse(img, c, axes, 0.0, 0.0, 360.0, st.color, cv::FILLED, cv::LINE_8);
  }
  return img;
}

}  // namespace

LesionCounts synthetic_lesion_counts(DrGrade grade, Rng& rng) {
  LesionCounts c{};
  auto& ma = c[lesion_id(LesionClass::Microaneurysm)];
  auto& hem = c[lesion_id(LesionClass::Hemorrhage)];
  auto& he = c[lesion_id(LesionClass::HardExudate)];
  auto& se = c[lesion_id(LesionClass::SoftExudate)];
  auto& irma = c[lesion_id(LesionClass::Irma)];
  auto& vb = c[lesion_id(LesionClass::VenousBeading)];

  const auto exudates = [&] {
    const int total = rng.range(0, 5);
    he = rng.range(0, total);
    se = total - he;
  };

  switch (grade) {
    case DrGrade::NoDr:
      break;
    case DrGrade::Mild:
      ma = rng.range(1, 5);
      break;
    case DrGrade::Moderate:
      ma = rng.range(3, 10);
      hem = rng.range(1, 5);
      exudates();
      break;
    case DrGrade::Severe: {
      ma = rng.range(3, 10);
      hem = rng.range(5, 10);
      exudates();
      const int vascular = rng.range(1, 4);
      irma = rng.range(0, vascular);
      vb = vascular - irma;
      break;
    }
    case DrGrade::ProliferativeDr: {
      const auto base = static_cast<DrGrade>(rng.range(0, 3));
      c = synthetic_lesion_counts(base, rng);
      c[lesion_id(LesionClass::Proliferative)] = rng.range(1, 3);
      break;
    }
  }
  return c;
}

DrGrade grade_from_lesion_counts(const LesionCounts& c) noexcept {
  const int ma = c[lesion_id(LesionClass::Microaneurysm)];
  const int hem = c[lesion_id(LesionClass::Hemorrhage)];
  const int exudates =
      c[lesion_id(LesionClass::HardExudate)] + c[lesion_id(LesionClass::SoftExudate)];
  const int vascular = c[lesion_id(LesionClass::Irma)] + c[lesion_id(LesionClass::VenousBeading)];
  if (c[lesion_id(LesionClass::Proliferative)] > 0) return DrGrade::ProliferativeDr;
  if (vascular > 0 && hem >= 5) return DrGrade::Severe;
  if (hem > 0 || exudates > 0 || vascular > 0) return DrGrade::Moderate;
  if (ma > 0) return DrGrade::Mild;
  return DrGrade::NoDr;
}

SyntheticDataset generate_synthetic_dataset(const SyntheticOptions& options) {
  if (options.n_per_grade < 1) throw GenerationError("n_per_grade must be at least 1");
  if (options.image_size < 64) throw GenerationError("image_size must be at least 64 pixels");
  if (!(options.label_noise >= 0.0 && options.label_noise <= 1.0)) {
    throw GenerationError("label_noise must be in [0,1]");
  }
  SyntheticDataset out;
  int k = 0;
  for (int g = 0; g < kGradeCount; ++g) {
    for (int i = 0; i < options.n_per_grade; ++i, ++k) {
      const std::string id = std::to_string(k / 2 + 1) + (k % 2 == 0 ? "_left" : "_right");
      Rng rng(derive_seed(options.seed, id));
      const auto grade = static_cast<DrGrade>(g);
      const auto counts = synthetic_lesion_counts(grade, rng);
      auto lesions = place_lesions(counts, rng, options.max_placement_retries, id);

      DrGrade label = grade;
      if (options.label_noise > 0.0 && rng.bernoulli(options.label_noise)) {
        int other = rng.range(0, kGradeCount - 2);
        if (other >= g) ++other;
        label = static_cast<DrGrade>(other);
      }
      out.images.emplace(id, render(lesions, options.image_size));
      out.dataset.records.push_back(GradedRecord::make(id, label));
      out.dataset.annotations.emplace(id, std::move(lesions));
    }
  }
  return out;
}

void write_png(const cv::Mat& image, const fs::path& path) {
  std::vector<uchar> buf;
  if (!cv::imencode(".png", image, buf, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw IoError("PNG encoding failed for '" + path.string() + "'");
  }
  write_text_file(path, std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

fs::path write_synthetic_dataset(const SyntheticDataset& synthetic, const fs::path& out_dir) {
  const auto image_dir = out_dir / "images";
  const auto label_dir = out_dir / "labels";
  fs::create_directories(image_dir);
  fs::create_directories(label_dir);
  for (const auto& r : synthetic.dataset.records) {
    write_png(synthetic.images.at(r.image_id), image_dir / (r.image_id + ".png"));
    write_annotation_file(synthetic.dataset.annotations.at(r.image_id),
                          label_dir / (r.image_id + ".txt"), false);
  }
  write_labels(synthetic.dataset.records, out_dir / "labels.csv");
  DatasetManifest m;
  m.image_dir = fs::absolute(image_dir);
  m.labels = fs::absolute(out_dir / "labels.csv");
  m.annotation_dir = fs::absolute(label_dir);
  m.class_subset = synthetic.dataset.class_subset;
  const auto manifest = out_dir / kManifestFileName;
  write_manifest(m, manifest);
  return manifest;
}

}  // namespace drscreen

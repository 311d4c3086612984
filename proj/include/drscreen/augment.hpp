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
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "drscreen/domain.hpp"

namespace drscreen {

enum class AugmentKind { FlipH, FlipV, Rot90, Crop, Noise };

/// One image transform. `param` is the kept fraction for Crop and the
/// Gaussian sigma (in 8-bit intensity units) for Noise.
struct AugmentOp {
  AugmentKind kind = AugmentKind::FlipH;
  double param = 0.0;

  static AugmentOp flip_h() { return {AugmentKind::FlipH, 0.0}; }
  static AugmentOp flip_v() { return {AugmentKind::FlipV, 0.0}; }
  /// Clockwise quarter turn.
  static AugmentOp rot90() { return {AugmentKind::Rot90, 0.0}; }
  /// Centered crop keeping `fraction` of each dimension, fraction in (0,1].
  static AugmentOp crop(double fraction) { return {AugmentKind::Crop, fraction}; }
  static AugmentOp noise(double sigma) { return {AugmentKind::Noise, sigma}; }

  /// Short tag used in file names, e.g. "fliph", "crop0.80".
  std::string tag() const;
};

/// Variants emitted per training image when a bundle is augmented.
std::vector<AugmentOp> default_augmentations();

/// Minimum share of a box's visible area that must survive a crop.
inline constexpr double kMinCropKeep = 0.25;

/// Kept region of a crop, in normalized coordinates of the source image.
struct CropWindow {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 1.0;
  double height = 1.0;

  static CropWindow centered(double fraction) {
    return {(1.0 - fraction) / 2.0, (1.0 - fraction) / 2.0, fraction, fraction};
  }
};

/// Boxes as seen through `window`. Boxes outside it are dropped; partially
/// covered boxes are clipped and kept when at least kMinCropKeep of their
/// visible area remains.
std::vector<Detection> crop_boxes(std::span<const Detection> boxes, const CropWindow& window);

/// Geometric part of an augmentation (Crop uses the centered window). Every
/// returned box is valid.
std::vector<Detection> transform_boxes(const AugmentOp& op, std::span<const Detection> boxes);

struct Augmented {
  cv::Mat image;
  std::vector<Detection> boxes;
};

/// Applies `op` to the image and its boxes. Noise draws come from `seed`.
Augmented augment_image(const cv::Mat& image, const AugmentOp& op,
                        std::span<const Detection> boxes, std::uint64_t seed = 0);

}  // namespace drscreen

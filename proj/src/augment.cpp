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

#include "drscreen/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <opencv2/core.hpp>

#include "drscreen/errors.hpp"
#include "drscreen/rng.hpp"

namespace drscreen {
namespace {

void check(const AugmentOp& op) {
  if (op.kind == AugmentKind::Crop && !(op.param > 0.0 && op.param <= 1.0)) {
    throw DomainError("crop fraction must be in (0,1]");
  }
  if (op.kind == AugmentKind::Noise && !(op.param >= 0.0)) {
    throw DomainError("noise sigma must be non-negative");
  }
}

std::optional<Detection> crop_box(const Detection& d, const CropWindow& win) {
  const auto visible = clip_to_unit(d.box);
  if (!visible) return std::nullopt;
  const double ix0 = std::max(visible->x_min(), win.x0);
  const double iy0 = std::max(visible->y_min(), win.y0);
  const double ix1 = std::min(visible->x_max(), win.x0 + win.width);
  const double iy1 = std::min(visible->y_max(), win.y0 + win.height);
  if (!(ix1 > ix0) || !(iy1 > iy0)) return std::nullopt;
  if ((ix1 - ix0) * (iy1 - iy0) < kMinCropKeep * visible->area()) return std::nullopt;
  auto b = BBox::from_corners((ix0 - win.x0) / win.width, (iy0 - win.y0) / win.height,
                              (ix1 - win.x0) / win.width, (iy1 - win.y0) / win.height);
  auto clipped = clip_to_unit(b);
  if (!clipped) return std::nullopt;
  return Detection{d.lesion, *clipped, d.confidence};
}

}  // namespace

std::string AugmentOp::tag() const {
  char buf[32];
  switch (kind) {
    case AugmentKind::FlipH:
      return "fliph";
    case AugmentKind::FlipV:
      return "flipv";
    case AugmentKind::Rot90:
      return "rot90";
    case AugmentKind::Crop:
      std::snprintf(buf, sizeof(buf), "crop%.2f", param);
      return buf;
    case AugmentKind::Noise:
      std::snprintf(buf, sizeof(buf), "noise%.1f", param);
      return buf;
  }
  return "unknown";
}

std::vector<AugmentOp> default_augmentations() {
  return {AugmentOp::flip_h(), AugmentOp::flip_v(), AugmentOp::rot90(), AugmentOp::crop(0.8),
          AugmentOp::noise(8.0)};
}

std::vector<Detection> crop_boxes(std::span<const Detection> boxes, const CropWindow& window) {
  std::vector<Detection> out;
  for (const auto& d : boxes) {
    if (auto c = crop_box(d, window)) out.push_back(*c);
  }
  return out;
}

std::vector<Detection> transform_boxes(const AugmentOp& op, std::span<const Detection> boxes) {
  check(op);
  if (op.kind == AugmentKind::Crop) return crop_boxes(boxes, CropWindow::centered(op.param));
  std::vector<Detection> out;
  out.reserve(boxes.size());
  for (const auto& d : boxes) {
    Detection t = d;
    switch (op.kind) {
      case AugmentKind::FlipH:
        t.box.cx = 1.0 - d.box.cx;
        break;
      case AugmentKind::FlipV:
        t.box.cy = 1.0 - d.box.cy;
        break;
      case AugmentKind::Rot90:
        // Clockwise: pixel (x, y) lands at (H - y, x) in the rotated frame.
        t.box = BBox{1.0 - d.box.cy, d.box.cx, d.box.h, d.box.w};
        break;
      case AugmentKind::Crop:
      case AugmentKind::Noise:
        break;
    }
    auto clipped = clip_to_unit(t.box);
    if (!clipped) continue;
    t.box = *clipped;
    out.push_back(t);
  }
  return out;
}

Augmented augment_image(const cv::Mat& image, const AugmentOp& op,
                        std::span<const Detection> boxes, std::uint64_t seed) {
  check(op);
  Augmented out;
  switch (op.kind) {
    case AugmentKind::FlipH:
      cv::flip(image, out.image, 1);
      out.boxes = transform_boxes(op, boxes);
      break;
    case AugmentKind::FlipV:
      cv::flip(image, out.image, 0);
      out.boxes = transform_boxes(op, boxes);
      break;
    case AugmentKind::Rot90:
      cv::rotate(image, out.image, cv::ROTATE_90_CLOCKWISE);
      out.boxes = transform_boxes(op, boxes);
      break;
    case AugmentKind::Crop: {
      const int w = std::max(1, static_cast<int>(std::lround(op.param * image.cols)));
      const int h = std::max(1, static_cast<int>(std::lround(op.param * image.rows)));
      const int x = (image.cols - w) / 2;
      const int y = (image.rows - h) / 2;
      out.image = image(cv::Rect(x, y, w, h)).clone();
      // Window from the integer pixel rect so boxes follow the pixels.
      const CropWindow window{static_cast<double>(x) / image.cols,
                              static_cast<double>(y) / image.rows,
                              static_cast<double>(w) / image.cols,
                              static_cast<double>(h) / image.rows};
      out.boxes = crop_boxes(boxes, window);
      break;
    }
    case AugmentKind::Noise: {
      out.image = image.clone();
      out.boxes = transform_boxes(op, boxes);
      if (op.param == 0.0) break;
      Rng rng(seed);
      CV_Assert(out.image.depth() == CV_8U);
      auto* p = out.image.ptr<uchar>(0);
      const std::size_t n = out.image.total() * static_cast<std::size_t>(out.image.channels());
      CV_Assert(out.image.isContinuous());
      for (std::size_t i = 0; i < n; ++i) {
        const double v = p[i] + op.param * rng.normal();
        p[i] = cv::saturate_cast<uchar>(v);
      }
      break;
    }
  }
  return out;
}

}  // namespace drscreen

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>

namespace dcssd {

/// Normalized center-form box on a [0,1]^2 canvas.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double x0, double y0, double x1, double y1) {
    return Box{0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Corner-clips a box to [0,1]^2.
inline Box clip_unit(const Box& b) {
  const double x0 = std::clamp(b.x0(), 0.0, 1.0), y0 = std::clamp(b.y0(), 0.0, 1.0);
  const double x1 = std::clamp(b.x1(), 0.0, 1.0), y1 = std::clamp(b.y1(), 0.0, 1.0);
  return Box::from_corners(x0, y0, x1, y1);
}

/// Intersection over union in corner form; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

/// SSD offset variances (center x, center y, width, height).
inline constexpr std::array<double, 4> kBoxVariances{0.1, 0.1, 0.2, 0.2};

/// Encodes gt relative to a default box. Throws on non-positive widths.
std::array<double, 4> encode_offsets(const Box& gt, const Box& def);
Box decode_offsets(const std::array<double, 4>& pred, const Box& def);

}  // namespace dcssd

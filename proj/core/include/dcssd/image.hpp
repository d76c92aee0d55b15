// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dcssd/tensor.hpp"

namespace dcssd {

/// A 3xHxW float image with values nominally in [-1, 1].
class ImageChip {
 public:
  static constexpr std::size_t kChannels = 3;

  ImageChip() : ImageChip(1, 1) {}
  ImageChip(std::size_t height, std::size_t width, float fill = 0.0f);
  /// Takes a (3, H, W) tensor; throws on any other shape.
  explicit ImageChip(TensorF data);

  std::size_t height() const { return data_.dim(1); }
  std::size_t width() const { return data_.dim(2); }

  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * height() + y) * width() + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * height() + y) * width() + x];
  }

  const TensorF& tensor() const { return data_; }
  TensorF& tensor() { return data_; }
  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::size_t size() const { return data_.size(); }

  bool within_unit_range() const;
  void clamp_unit();

  friend bool operator==(const ImageChip& a, const ImageChip& b) { return a.data_ == b.data_; }

 private:
  TensorF data_;
};

/// Bilinear resampling with half-pixel centers and edge clamping; same size is a copy.
ImageChip resize_bilinear(const ImageChip& src, std::size_t height, std::size_t width);

/// Area-weighted (box filter) downsampling with fractional pixel overlaps.
ImageChip area_downsample(const ImageChip& src, std::size_t height, std::size_t width);

/// Separable Gaussian blur, radius ceil(3 sigma), edge clamping. sigma == 0 is a copy.
ImageChip gaussian_blur(const ImageChip& src, double sigma);

/// Crops pixel rows [y0, y1) and columns [x0, x1).
ImageChip crop(const ImageChip& src, std::size_t y0, std::size_t x0, std::size_t y1,
               std::size_t x1);

/// Stacks equally sized chips into an (N, 3, H, W) tensor.
TensorF stack_chips(const std::vector<ImageChip>& chips);
ImageChip chip_from_batch(const TensorF& batch, std::size_t index);

/// Interleaved 8-bit RGB (HWC) conversion, v -> round(255 (v + 1) / 2) clamped.
std::vector<std::uint8_t> to_rgb8(const ImageChip& chip);
ImageChip from_rgb8(const std::vector<std::uint8_t>& rgb, std::size_t height, std::size_t width);

}  // namespace dcssd

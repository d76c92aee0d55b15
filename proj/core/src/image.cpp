// SPDX-License-Identifier: Apache-2.0
#include "dcssd/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcssd {

ImageChip::ImageChip(std::size_t height, std::size_t width, float fill)
    : data_({kChannels, height, width}, fill) {
  if (height == 0 || width == 0) throw std::invalid_argument("ImageChip: empty image");
}

ImageChip::ImageChip(TensorF data) : data_(std::move(data)) {
  if (data_.rank() != 3 || data_.dim(0) != kChannels || data_.dim(1) == 0 || data_.dim(2) == 0) {
    throw std::invalid_argument("ImageChip: expected (3,H,W) tensor, got " +
                                shape_string(data_.shape()));
  }
}

bool ImageChip::within_unit_range() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return v >= -1.0f && v <= 1.0f; });
}

void ImageChip::clamp_unit() {
  for (auto& v : data_) v = std::clamp(v, -1.0f, 1.0f);
}

namespace {

// Separable 1-D resampling weights: out[o] = sum_k w[o][k] * in[idx[o][k]].
struct Taps {
  std::vector<std::vector<std::size_t>> index;
  std::vector<std::vector<float>> weight;
};

Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.index.resize(out);
  t.weight.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    t.index[o] = {lo, hi};
    t.weight[o] = {static_cast<float>(1.0 - frac), static_cast<float>(frac)};
  }
  return t;
}

Taps area_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.index.resize(out);
  t.weight.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double lo = static_cast<double>(o) * scale;
    const double hi = static_cast<double>(o + 1) * scale;
    const auto first = static_cast<std::size_t>(std::floor(lo));
    const auto last = std::min(in, static_cast<std::size_t>(std::ceil(hi)));
    for (std::size_t i = first; i < last; ++i) {
      const double overlap =
          std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
      if (overlap <= 0.0) continue;
      t.index[o].push_back(i);
      t.weight[o].push_back(static_cast<float>(overlap / scale));
    }
  }
  return t;
}

ImageChip apply_separable(const ImageChip& src, const Taps& rows, const Taps& cols,
                          std::size_t height, std::size_t width) {
  const std::size_t h = src.height();
  // Horizontal pass into (3, h, width), then vertical.
  std::vector<float> tmp(ImageChip::kChannels * h * width);
  for (std::size_t c = 0; c < ImageChip::kChannels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        float acc = 0.0f;
        for (std::size_t k = 0; k < cols.index[x].size(); ++k)
          acc += cols.weight[x][k] * src.at(c, y, cols.index[x][k]);
        tmp[(c * h + y) * width + x] = acc;
      }
  ImageChip out(height, width);
  for (std::size_t c = 0; c < ImageChip::kChannels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        float acc = 0.0f;
        for (std::size_t k = 0; k < rows.index[y].size(); ++k)
          acc += rows.weight[y][k] * tmp[(c * h + rows.index[y][k]) * width + x];
        out.at(c, y, x) = acc;
      }
  return out;
}

}  // namespace

ImageChip resize_bilinear(const ImageChip& src, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("resize_bilinear: empty target");
  if (height == src.height() && width == src.width()) return src;
  return apply_separable(src, bilinear_taps(src.height(), height),
                         bilinear_taps(src.width(), width), height, width);
}

ImageChip area_downsample(const ImageChip& src, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("area_downsample: empty target");
  if (height > src.height() || width > src.width()) {
    throw std::invalid_argument("area_downsample: target larger than source");
  }
  if (height == src.height() && width == src.width()) return src;
  return apply_separable(src, area_taps(src.height(), height), area_taps(src.width(), width),
                         height, width);
}

ImageChip gaussian_blur(const ImageChip& src, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("gaussian_blur: negative sigma");
  if (sigma == 0.0) return src;
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    total += kernel[i + radius];
  }
  auto make_taps = [&](std::size_t n) {
    Taps t;
    t.index.resize(n);
    t.weight.resize(n);
    for (std::size_t o = 0; o < n; ++o)
      for (long i = -radius; i <= radius; ++i) {
        const long j = std::clamp(static_cast<long>(o) + i, 0L, static_cast<long>(n) - 1);
        t.index[o].push_back(static_cast<std::size_t>(j));
        t.weight[o].push_back(static_cast<float>(kernel[i + radius] / total));
      }
    return t;
  };
  return apply_separable(src, make_taps(src.height()), make_taps(src.width()), src.height(),
                         src.width());
}

ImageChip crop(const ImageChip& src, std::size_t y0, std::size_t x0, std::size_t y1,
               std::size_t x1) {
  if (!(y0 < y1 && x0 < x1 && y1 <= src.height() && x1 <= src.width())) {
    throw std::invalid_argument("crop: region outside image");
  }
  ImageChip out(y1 - y0, x1 - x0);
  for (std::size_t c = 0; c < ImageChip::kChannels; ++c)
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) out.at(c, y - y0, x - x0) = src.at(c, y, x);
  return out;
}

TensorF stack_chips(const std::vector<ImageChip>& chips) {
  if (chips.empty()) throw std::invalid_argument("stack_chips: empty list");
  const std::size_t h = chips.front().height(), w = chips.front().width();
  TensorF out({chips.size(), ImageChip::kChannels, h, w});
  for (std::size_t i = 0; i < chips.size(); ++i) {
    if (chips[i].height() != h || chips[i].width() != w) {
      throw std::invalid_argument("stack_chips: chips differ in size");
    }
    std::copy(chips[i].tensor().begin(), chips[i].tensor().end(), out.slab(i).begin());
  }
  return out;
}

ImageChip chip_from_batch(const TensorF& batch, std::size_t index) {
  const auto slab = batch.slab(index);
  TensorF t({batch.dim(1), batch.dim(2), batch.dim(3)}, std::vector<float>(slab.begin(), slab.end()));
  return ImageChip(std::move(t));
}

std::vector<std::uint8_t> to_rgb8(const ImageChip& chip) {
  const std::size_t h = chip.height(), w = chip.width();
  std::vector<std::uint8_t> out(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(chip.at(c, y, x)), -1.0, 1.0);
        out[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(255.0 * (v + 1.0) / 2.0));
      }
  return out;
}

ImageChip from_rgb8(const std::vector<std::uint8_t>& rgb, std::size_t height, std::size_t width) {
  if (rgb.size() != height * width * 3) throw std::invalid_argument("from_rgb8: size mismatch");
  ImageChip out(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(c, y, x) = 2.0f * static_cast<float>(rgb[(y * width + x) * 3 + c]) / 255.0f - 1.0f;
  return out;
}

}  // namespace dcssd

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dcssd/image.hpp"

namespace dcssd {

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

/// Lossless 8-bit RGB PNG. Throws DataError on I/O failure.
void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

void write_chip_png(const std::filesystem::path& path, const ImageChip& chip);
ImageChip read_chip_png(const std::filesystem::path& path);

}  // namespace dcssd

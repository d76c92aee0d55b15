// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dcssd/image.hpp"

namespace dcssd {

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixelBytes = 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixelBytes;
inline constexpr int kCifarClasses = 10;

/// One CIFAR-10 binary record: label byte then 1024 R, 1024 G, 1024 B bytes (row-major 32x32).
struct CifarRecord {
  std::uint8_t label = 0;
  std::array<std::uint8_t, kCifarPixelBytes> pixels{};

  friend bool operator==(const CifarRecord&, const CifarRecord&) = default;
};

/// Parses records from an in-memory buffer; throws DataError on bad length or label.
std::vector<CifarRecord> parse_cifar10(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_cifar10(std::span<const CifarRecord> records);

std::vector<CifarRecord> load_cifar10(const std::filesystem::path& path);
void save_cifar10(const std::filesystem::path& path, std::span<const CifarRecord> records);

enum class CifarSplit { Train, Test };

/// Loads data_batch_1..5.bin (train) or test_batch.bin (test) from a directory.
std::vector<CifarRecord> load_cifar10_split(const std::filesystem::path& dir, CifarSplit split);

/// value = 2 * byte / 255 - 1, shape 3x32x32.
ImageChip record_to_chip(const CifarRecord& rec);
/// Inverse quantization: byte = round(255 (v + 1) / 2).
CifarRecord chip_to_record(const ImageChip& chip, std::uint8_t label);

std::vector<ImageChip> records_to_chips(std::span<const CifarRecord> records);

/// Procedural 10-class stand-in written in the CIFAR-10 record layout, used when the
/// real dataset is not available. Classes differ by shape and texture.
std::vector<CifarRecord> synthesize_cifar_like(std::size_t count, std::uint64_t seed);

/// Writes a train/test pair of CIFAR-format files (data_batch_1..5.bin, test_batch.bin)
/// holding synthetic records so the on-disk layout matches the real distribution.
void write_synthetic_cifar_dir(const std::filesystem::path& dir, std::size_t train_count,
                               std::size_t test_count, std::uint64_t seed);

}  // namespace dcssd

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dcssd::cli {

inline constexpr const char* kCifarUrl = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";

/// HTTP(S) GET into memory; DataError on transport failure or a non-2xx status.
std::vector<std::uint8_t> http_get(const std::string& url);

/// Decompresses a gzip stream; DataError on corrupt input.
std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes);

/// Regular-file members of a ustar archive, keyed by member path.
std::map<std::string, std::vector<std::uint8_t>> untar(std::span<const std::uint8_t> bytes);

/// Extracts data_batch_1..5.bin and test_batch.bin from the CIFAR-10 binary tarball into
/// `dir`, checking that each parses as CIFAR records. Returns the files written.
std::vector<std::filesystem::path> install_cifar_archive(std::span<const std::uint8_t> targz,
                                                         const std::filesystem::path& dir);

}  // namespace dcssd::cli

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

namespace dcssd::cli {

/// git blob id: SHA-1 of "blob <size>\0" followed by the bytes, as 40 hex digits.
std::string git_blob_hash(std::span<const std::uint8_t> bytes);

/// Blob id for a file. For a directory, SHA-1 over "<relative path>\0<blob id>\n" lines of
/// every regular file in byte-sorted path order, so renames and edits both change it.
std::string content_hash(const std::filesystem::path& path);

/// Run record written as manifest.<subcommand>.json beside a stage's outputs.
class RunManifest {
 public:
  RunManifest(std::string subcommand, nlohmann::json resolved_config, std::uint64_t seed);

  void add_input(const std::string& label, const std::filesystem::path& path);
  void add_output(const std::string& label, const std::filesystem::path& path);
  void add_seed(const std::string& label, std::uint64_t seed);
  /// Records seconds elapsed since the previous mark (or construction) under `phase`.
  void mark(const std::string& phase);
  void set(const std::string& key, nlohmann::json value);

  /// Writes the manifest; returns its path.
  std::filesystem::path write(const std::filesystem::path& out_dir);
  const nlohmann::json& json() const { return doc_; }

 private:
  using Clock = std::chrono::steady_clock;
  nlohmann::json doc_;
  Clock::time_point start_;
  Clock::time_point last_;
};

}  // namespace dcssd::cli

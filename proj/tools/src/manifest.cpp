// SPDX-License-Identifier: Apache-2.0
#include "dcssd/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <memory>
#include <vector>

#include "dcssd/errors.hpp"

namespace dcssd::cli {
namespace {

std::string sha1_hex(std::span<const std::uint8_t> head, std::span<const std::uint8_t> body) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), head.data(), head.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), body.data(), body.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("SHA-1 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 15]);
  }
  return hex;
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double seconds(std::chrono::steady_clock::duration d) {
  return std::chrono::duration<double>(d).count();
}

}  // namespace

std::string git_blob_hash(std::span<const std::uint8_t> bytes) {
  std::string head = "blob " + std::to_string(bytes.size());
  head.push_back('\0');
  return sha1_hex(as_bytes(head), bytes);
}

std::string content_hash(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path)) return git_blob_hash(read_file(path));
  if (!fs::is_directory(path)) throw DataError("input not found: " + path.string());
  std::vector<std::string> rel;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), path).generic_string());
  }
  std::sort(rel.begin(), rel.end());
  std::string listing;
  for (const auto& r : rel) {
    listing += r;
    listing.push_back('\0');
    listing += git_blob_hash(read_file(path / r));
    listing.push_back('\n');
  }
  return sha1_hex({}, as_bytes(listing));
}

RunManifest::RunManifest(std::string subcommand, nlohmann::json resolved_config,
                         std::uint64_t seed)
    : start_(Clock::now()), last_(start_) {
  doc_ = {{"subcommand", std::move(subcommand)},
          {"config", std::move(resolved_config)},
          {"seed", seed},
          {"seeds", nlohmann::json::object()},
          {"inputs", nlohmann::json::array()},
          {"outputs", nlohmann::json::array()},
          {"timings", nlohmann::json::object()}};
}

void RunManifest::add_input(const std::string& label, const std::filesystem::path& path) {
  doc_["inputs"].push_back({{"label", label}, {"path", path.string()}, {"hash", content_hash(path)}});
}

void RunManifest::add_output(const std::string& label, const std::filesystem::path& path) {
  doc_["outputs"].push_back({{"label", label}, {"path", path.string()}, {"hash", content_hash(path)}});
}

void RunManifest::add_seed(const std::string& label, std::uint64_t seed) { doc_["seeds"][label] = seed; }

void RunManifest::mark(const std::string& phase) {
  const auto now = Clock::now();
  doc_["timings"][phase] = seconds(now - last_);
  last_ = now;
}

void RunManifest::set(const std::string& key, nlohmann::json value) { doc_[key] = std::move(value); }

std::filesystem::path RunManifest::write(const std::filesystem::path& out_dir) {
  doc_["timings"]["total"] = seconds(Clock::now() - start_);
  // The combined input hash identifies the run's inputs independently of timings.
  std::string joined;
  for (const auto& in : doc_["inputs"]) joined += in["hash"].get<std::string>() + "\n";
  doc_["input_hash"] = sha1_hex({}, as_bytes(joined));
  const auto path = out_dir / ("manifest." + doc_["subcommand"].get<std::string>() + ".json");
  std::ofstream out(path);
  out << doc_.dump(2) << "\n";
  if (!out) throw DataError("cannot write " + path.string());
  return path;
}

}  // namespace dcssd::cli

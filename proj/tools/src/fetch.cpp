// SPDX-License-Identifier: Apache-2.0
#include "dcssd/fetch.hpp"

#include <curl/curl.h>
#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <memory>

#include "dcssd/cifar.hpp"
#include "dcssd/errors.hpp"

namespace dcssd::cli {
namespace {

std::size_t append_body(char* data, std::size_t size, std::size_t count, void* user) {
  auto* body = static_cast<std::vector<std::uint8_t>*>(user);
  body->insert(body->end(), data, data + size * count);
  return size * count;
}

std::uint64_t octal_field(std::span<const std::uint8_t> field) {
  std::uint64_t v = 0;
  for (std::uint8_t c : field) {
    if (c == 0 || c == ' ') {
      if (v != 0) break;
      continue;
    }
    if (c < '0' || c > '7') throw DataError("tar: malformed numeric header field");
    v = v * 8 + (c - '0');
  }
  return v;
}

std::string text_field(std::span<const std::uint8_t> field) {
  const auto end = std::find(field.begin(), field.end(), std::uint8_t{0});
  return {field.begin(), end};
}

}  // namespace

std::vector<std::uint8_t> http_get(const std::string& url) {
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw DataError("curl initialization failed");
  std::vector<std::uint8_t> body;
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, append_body);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &body);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  const CURLcode rc = curl_easy_perform(curl.get());
  if (rc != CURLE_OK) throw DataError("download of " + url + " failed: " + curl_easy_strerror(rc));
  return body;
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw DataError("zlib initialization failed");
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> buf(1 << 20);
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("gzip stream is corrupt or truncated");
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw DataError("gzip stream is truncated");
    }
  }
  inflateEnd(&zs);
  return out;
}

std::map<std::string, std::vector<std::uint8_t>> untar(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kBlock = 512;
  std::map<std::string, std::vector<std::uint8_t>> files;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (pos + kBlock > bytes.size()) throw DataError("tar: truncated header");
    const auto header = bytes.subspan(pos, kBlock);
    if (std::all_of(header.begin(), header.end(), [](std::uint8_t b) { return b == 0; })) break;
    std::string name = text_field(header.subspan(0, 100));
    const std::string prefix = text_field(header.subspan(345, 155));
    if (!prefix.empty()) name = prefix + "/" + name;
    const std::uint64_t size = octal_field(header.subspan(124, 12));
    const char type = static_cast<char>(header[156]);
    pos += kBlock;
    if (pos + size > bytes.size()) throw DataError("tar: member '" + name + "' is truncated");
    if (type == '0' || type == '\0') {
      files[name].assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + size));
    }
    pos += (size + kBlock - 1) / kBlock * kBlock;
  }
  return files;
}

std::vector<std::filesystem::path> install_cifar_archive(std::span<const std::uint8_t> targz,
                                                         const std::filesystem::path& dir) {
  const auto members = untar(gunzip(targz));
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const char* want : {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                           "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"}) {
    const auto it = std::find_if(members.begin(), members.end(), [&](const auto& m) {
      return std::filesystem::path(m.first).filename() == want;
    });
    if (it == members.end()) throw DataError(std::string("archive lacks ") + want);
    parse_cifar10(it->second);  // throws DataError on a malformed batch
    const auto path = dir / want;
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(it->second.data()),
              static_cast<std::streamsize>(it->second.size()));
    if (!out) throw DataError("cannot write " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace dcssd::cli

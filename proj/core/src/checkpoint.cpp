// SPDX-License-Identifier: Apache-2.0
#include "dcssd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dcssd/errors.hpp"

namespace dcssd {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'S', 'S', 'D', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in native order, which must be little-endian");

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void Checkpoint::add(std::string name, TensorF value) {
  tensors.push_back({std::move(name), std::move(value)});
}

void Checkpoint::add_params(const nn::ParamList<float>& params, const std::string& prefix) {
  for (const auto& p : params) add(prefix + p.name, p.param->value);
}

const TensorF* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

void Checkpoint::restore_params(const nn::ParamList<float>& params,
                                const std::string& prefix) const {
  for (const auto& p : params) {
    const TensorF* stored = find(prefix + p.name);
    if (!stored) throw DataError("checkpoint is missing tensor " + prefix + p.name);
    if (stored->shape() != p.param->value.shape()) {
      throw DataError("checkpoint tensor " + prefix + p.name + " has shape " +
                      shape_string(stored->shape()) + ", expected " +
                      shape_string(p.param->value.shape()));
    }
    p.param->value = *stored;
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest{{"format", "dcssd-checkpoint"}, {"version", 1}, {"metadata", ckpt.metadata}};
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    const std::uint64_t nbytes = t.value.size() * sizeof(float);
    entries.push_back({{"name", t.name},
                       {"shape", t.value.shape()},
                       {"dtype", "float32"},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  manifest["tensors"] = entries;
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& t : ckpt.tensors) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.value.data());
    out.insert(out.end(), raw, raw + t.value.size() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw DataError("not a dcssd checkpoint (bad magic)");
  }
  const std::uint64_t len = get_u64(bytes.data() + 8);
  if (16 + len > bytes.size()) throw DataError("truncated checkpoint manifest");
  Checkpoint ckpt;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
    ckpt.metadata = manifest.at("metadata");
    const std::size_t base = 16 + len;
    for (const auto& e : manifest.at("tensors")) {
      if (e.at("dtype") != "float32") throw DataError("unsupported tensor dtype");
      const auto shape = e.at("shape").get<Shape>();
      const auto off = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (nbytes != shape_size(shape) * sizeof(float) || base + off + nbytes > bytes.size()) {
        throw DataError("checkpoint tensor " + e.at("name").get<std::string>() + " is truncated");
      }
      TensorF t(shape);
      std::memcpy(t.data(), bytes.data() + base + off, nbytes);
      ckpt.add(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  const auto bytes = encode_checkpoint(ckpt);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace dcssd

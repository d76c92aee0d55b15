// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint archive layout (all integers little-endian):
//   8 bytes   magic "DCSSDCK1"
//   8 bytes   manifest length L (uint64)
//   L bytes   JSON manifest: {"format", "version", "metadata", "tensors": [
//               {"name", "shape", "dtype": "float32", "offset", "nbytes"}, ...]}
//   blobs     raw float32 tensor data; offsets are relative to the blob section
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcssd/nn.hpp"
#include "dcssd/tensor.hpp"

namespace dcssd {

struct NamedTensor {
  std::string name;
  TensorF value;
};

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  void add(std::string name, TensorF value);
  void add_params(const nn::ParamList<float>& params, const std::string& prefix = "");
  const TensorF* find(const std::string& name) const;
  /// Copies stored values into params by name; throws DataError on missing name or shape mismatch.
  void restore_params(const nn::ParamList<float>& params, const std::string& prefix = "") const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dcssd

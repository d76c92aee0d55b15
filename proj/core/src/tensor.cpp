// SPDX-License-Identifier: Apache-2.0
#include "dcssd/tensor.hpp"

namespace dcssd {

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

}  // namespace dcssd

// SPDX-License-Identifier: Apache-2.0
#include "dcssd/box.hpp"

#include <cmath>
#include <stdexcept>

namespace dcssd {

std::array<double, 4> encode_offsets(const Box& gt, const Box& def) {
  if (!(gt.w > 0.0 && gt.h > 0.0 && def.w > 0.0 && def.h > 0.0)) {
    throw std::invalid_argument("encode_offsets: boxes need positive width and height");
  }
  return {(gt.cx - def.cx) / def.w / kBoxVariances[0],
          (gt.cy - def.cy) / def.h / kBoxVariances[1],
          std::log(gt.w / def.w) / kBoxVariances[2],
          std::log(gt.h / def.h) / kBoxVariances[3]};
}

Box decode_offsets(const std::array<double, 4>& pred, const Box& def) {
  if (!(def.w > 0.0 && def.h > 0.0)) {
    throw std::invalid_argument("decode_offsets: default box needs positive width and height");
  }
  return Box{def.cx + pred[0] * kBoxVariances[0] * def.w,
             def.cy + pred[1] * kBoxVariances[1] * def.h,
             def.w * std::exp(pred[2] * kBoxVariances[2]),
             def.h * std::exp(pred[3] * kBoxVariances[3])};
}

}  // namespace dcssd

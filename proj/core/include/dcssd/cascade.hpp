// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcssd/enhancer.hpp"
#include "dcssd/features.hpp"
#include "dcssd/gan.hpp"
#include "dcssd/ssd.hpp"

namespace dcssd {

struct CascadeConfig {
  double t_high = 0.5;          // pass-through threshold
  double t_low = 0.15;          // lower edge of the rescue band
  double small_max_area = 0.05;  // normalized w*h
  double t_rescore = 0.6;       // classifier confidence needed for promotion
  ProjectionConfig projection;

  void validate() const;
  nlohmann::json to_json() const;
  static CascadeConfig from_json(const nlohmann::json& j);
};

/// The frozen networks the cascade runs on.
struct CascadeModels {
  GeneratorNet& generator;
  DiscriminatorNet& discriminator;
  const LinearClassifier& classifier;
  DetectorNet& detector;
};

struct RescueCandidate {
  Detection detection;
  ImageChip chip;      // canvas crop before enhancement
  ImageChip enhanced;  // 32x32
  int class_id = 0;
  double confidence = 0.0;
  bool promoted = false;
};

struct CascadeTrace {
  std::vector<Detection> pass1;
  std::vector<Detection> pass_through;
  std::vector<RescueCandidate> candidates;
  std::vector<Detection> final;
};

/// Detect at t_low, pass through >= t_high, crop/enhance/classify small detections in
/// [t_low, t_high) and promote them when the classifier is confident enough, then NMS.
/// Candidate k is enhanced with seed `seed + k`.
CascadeTrace run_cascade(CascadeModels& models, const ImageChip& canvas, const CascadeConfig& cfg,
                         std::uint64_t seed);
/// Same as run_cascade with pass 1 already computed at t_low.
CascadeTrace cascade_from_pass1(CascadeModels& models, const ImageChip& canvas,
                                std::vector<Detection> pass1, const CascadeConfig& cfg,
                                std::uint64_t seed);

/// Exactly detect(net, canvas, conf_thr).
std::vector<Detection> run_baseline(DetectorNet& net, const ImageChip& canvas, double conf_thr);

nlohmann::json cascade_trace_json(const CascadeTrace& trace);

}  // namespace dcssd

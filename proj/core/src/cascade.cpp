// SPDX-License-Identifier: Apache-2.0
#include "dcssd/cascade.hpp"

#include <stdexcept>

#include "dcssd/scene.hpp"

namespace dcssd {

void CascadeConfig::validate() const {
  if (!(t_low > 0.0 && t_low < t_high && t_high <= 1.0)) {
    throw std::invalid_argument("CascadeConfig: need 0 < t_low < t_high <= 1");
  }
  if (!(small_max_area > 0.0 && small_max_area <= 1.0)) {
    throw std::invalid_argument("CascadeConfig: small_max_area must lie in (0, 1]");
  }
  // 1.0 is allowed as the "promotion disabled" setting.
  if (!(t_rescore > 0.0 && t_rescore <= 1.0)) {
    throw std::invalid_argument("CascadeConfig: t_rescore must lie in (0, 1]");
  }
  projection.validate();
}

nlohmann::json CascadeConfig::to_json() const {
  return {{"t_high", t_high},
          {"t_low", t_low},
          {"small_max_area", small_max_area},
          {"t_rescore", t_rescore},
          {"projection", projection.to_json()}};
}

CascadeConfig CascadeConfig::from_json(const nlohmann::json& j) {
  CascadeConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "t_high") c.t_high = value.get<double>();
    else if (key == "t_low") c.t_low = value.get<double>();
    else if (key == "small_max_area") c.small_max_area = value.get<double>();
    else if (key == "t_rescore") c.t_rescore = value.get<double>();
    else if (key == "projection") c.projection = ProjectionConfig::from_json(value);
    else throw std::invalid_argument("CascadeConfig: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

CascadeTrace cascade_from_pass1(CascadeModels& models, const ImageChip& canvas,
                                std::vector<Detection> pass1, const CascadeConfig& cfg,
                                std::uint64_t seed) {
  cfg.validate();
  CascadeTrace trace;
  trace.pass1 = std::move(pass1);
  std::vector<ImageChip> resized;
  for (const Detection& det : trace.pass1) {
    if (det.confidence >= cfg.t_high) {
      trace.pass_through.push_back(det);
    } else if (det.confidence >= cfg.t_low && det.box.area() <= cfg.small_max_area) {
      const PixelRect r = pixel_rect(det.box, canvas.height());
      RescueCandidate cand;
      cand.detection = det;
      cand.chip = crop(canvas, r.y0, r.x0, r.y1, r.x1);
      resized.push_back(resize_bilinear(cand.chip, kChipSide, kChipSide));
      trace.candidates.push_back(std::move(cand));
    }
  }

  if (!trace.candidates.empty()) {
    std::vector<ImageChip> enhanced;
    if (cfg.projection.steps == 0) {
      enhanced = resized;
    } else {
      ProjectionConfig proj = cfg.projection;
      proj.seed = seed;
      for (auto& res : project_latent_batch(models.generator, resized, proj,
                                            &models.discriminator)) {
        enhanced.push_back(std::move(res.enhanced));
      }
    }
    const TensorF features = extract_features_batch(models.discriminator, enhanced);
    for (std::size_t k = 0; k < trace.candidates.size(); ++k) {
      RescueCandidate& cand = trace.candidates[k];
      cand.enhanced = std::move(enhanced[k]);
      const Classification cls = classify_features(models.classifier, features.slab(k));
      cand.class_id = cls.class_id;
      cand.confidence = cls.confidence;
      cand.promoted = cls.confidence >= cfg.t_rescore;
    }
  }

  std::vector<Detection> merged = trace.pass_through;
  for (const RescueCandidate& cand : trace.candidates) {
    if (cand.promoted) merged.push_back({cand.detection.box, cand.class_id, cand.confidence});
  }
  const DetectorConfig& dc = models.detector.config();
  trace.final = nms(merged, dc.nms_iou, dc.top_k);
  return trace;
}

CascadeTrace run_cascade(CascadeModels& models, const ImageChip& canvas, const CascadeConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  return cascade_from_pass1(models, canvas, detect(models.detector, canvas, cfg.t_low), cfg, seed);
}

std::vector<Detection> run_baseline(DetectorNet& net, const ImageChip& canvas, double conf_thr) {
  return detect(net, canvas, conf_thr);
}

namespace {

nlohmann::json detections_json(const std::vector<Detection>& dets) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : dets) {
    arr.push_back({{"class_id", d.class_id},
                   {"cx", d.box.cx},
                   {"cy", d.box.cy},
                   {"w", d.box.w},
                   {"h", d.box.h},
                   {"confidence", d.confidence}});
  }
  return arr;
}

}  // namespace

nlohmann::json cascade_trace_json(const CascadeTrace& trace) {
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& c : trace.candidates) {
    candidates.push_back({{"detection", detections_json({c.detection}).front()},
                          {"crop_height", c.chip.height()},
                          {"crop_width", c.chip.width()},
                          {"classifier_class", c.class_id},
                          {"classifier_confidence", c.confidence},
                          {"promoted", c.promoted}});
  }
  return {{"pass1", detections_json(trace.pass1)},
          {"pass_through", detections_json(trace.pass_through)},
          {"candidates", candidates},
          {"final", detections_json(trace.final)}};
}

}  // namespace dcssd

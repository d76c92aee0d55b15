// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcssd/box.hpp"
#include "dcssd/checkpoint.hpp"
#include "dcssd/image.hpp"
#include "dcssd/nn.hpp"
#include "dcssd/scene.hpp"

namespace dcssd {

inline constexpr std::size_t kObjectClasses = 10;
/// Object classes plus background, which sits at internal index 0.
inline constexpr std::size_t kScoreClasses = kObjectClasses + 1;
inline constexpr std::size_t kOffsetDims = 4;

struct GridSpec {
  std::size_t size = 1;             // f_k
  std::vector<double> ratios{1.0};  // aspect ratios w/h
};

struct DefaultBoxSet {
  struct Layout {
    std::size_t grid = 0;
    std::size_t boxes_per_cell = 0;
    double scale = 0.0;
    std::vector<double> ratios;
  };
  std::vector<Box> boxes;  // ordered by (map, row, column, ratio)
  std::vector<Layout> layout;

  std::size_t size() const { return boxes.size(); }
};

/// Linear scale ladder s_k between s_min and s_max; ratio 1 gets an extra box of
/// scale sqrt(s_k s_{k+1}) (with s_m = 1 for the last map). Corners are clipped.
DefaultBoxSet build_default_boxes(std::span<const GridSpec> grids, double s_min, double s_max,
                                  bool extra_unit_box = true);

inline constexpr int kBackgroundMatch = -1;

struct MatchResult {
  std::vector<int> assigned_truth;      // per default: truth index or kBackgroundMatch
  std::vector<std::size_t> best_default;  // per truth
};

/// Forced best match per truth (lowest index on ties), then threshold matching of the
/// remaining defaults to their highest-IoU truth.
MatchResult match_boxes(std::span<const GtBox> truths, std::span<const Box> defaults,
                        double tau = 0.5);

/// Per-default training targets: label 0 = background, class_id + 1 otherwise.
struct MatchTargets {
  std::vector<int> labels;
  std::vector<std::array<double, 4>> offsets;  // encoded; zero for background
  std::size_t positives = 0;
};

MatchTargets make_targets(std::span<const GtBox> truths, std::span<const Box> defaults,
                          const MatchResult& match);

template <typename T>
struct MultiboxLoss {
  T loss{};
  T conf_loss{};  // summed, before normalization
  T loc_loss{};   // summed, before normalization
  std::size_t positives = 0;
  Tensor<T> grad_logits;   // same shape as logits
  Tensor<T> grad_offsets;  // same shape as offsets
};

/// L = (L_conf + alpha L_loc) / N over a batch. logits (B, D, 11), offsets (B, D, 4),
/// one MatchTargets per image. Hard negatives are mined per image (floor(neg_ratio
/// * N_i) highest background losses, ties by lower index) and held fixed for the gradient.
template <typename T>
MultiboxLoss<T> multibox_loss(const Tensor<T>& logits, const Tensor<T>& offsets,
                              std::span<const MatchTargets> targets, double alpha = 1.0,
                              double neg_ratio = 3.0);

struct Detection {
  Box box;
  int class_id = 0;
  double confidence = 0.0;
};

/// Per-class greedy suppression (IoU > iou_thr), at most top_k survivors, sorted by
/// confidence descending with ties kept in input order.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_thr = 0.45,
                           std::size_t top_k = 200);

struct DetectorConfig {
  std::size_t canvas_size = 128;
  std::vector<std::size_t> backbone_channels{32, 64, 128, 128, 128};
  std::vector<double> ratios{1.0, 2.0, 0.5};
  double s_min = 0.1;
  double s_max = 0.4;
  double match_tau = 0.5;
  double neg_ratio = 3.0;
  double alpha = 1.0;
  double nms_iou = 0.45;
  std::size_t top_k = 200;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

struct DetectorOutput {
  TensorF logits;   // (B, D, 11)
  TensorF offsets;  // (B, D, 4)
};

/// Strided 3x3 conv backbone (128 -> 64 -> 32 -> 16 -> 8 -> 4) with a stride-1 conv at
/// 16x16; 3x3 predictor convs on the 16, 8 and 4 maps.
class DetectorNet {
 public:
  explicit DetectorNet(DetectorConfig cfg = {});
  DetectorNet(const DetectorNet&) = delete;
  DetectorNet& operator=(const DetectorNet&) = delete;
  DetectorNet(DetectorNet&&) = default;
  DetectorNet& operator=(DetectorNet&&) = default;

  void initialize(std::uint64_t seed);
  DetectorOutput forward(const TensorF& canvases);
  void backward(const TensorF& grad_logits, const TensorF& grad_offsets);

  nn::ParamList<float> params();
  const DefaultBoxSet& defaults() const { return defaults_; }
  const DetectorConfig& config() const { return cfg_; }

 private:
  DetectorConfig cfg_;
  DefaultBoxSet defaults_;
  std::vector<nn::Conv2d<float>> backbone_;
  std::vector<nn::ActivationLayer<float>> relus_;
  std::vector<nn::Conv2d<float>> heads_;
  std::vector<std::size_t> head_taps_;  // backbone layer index feeding each head
  std::vector<std::size_t> head_offsets_;  // first default index of each head
  std::vector<Shape> head_shapes_;
};

struct DetectorLogRow {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double conf_loss = 0.0;
  double loc_loss = 0.0;
};

using DetectorProgress = std::function<void(const DetectorLogRow&)>;

struct DetectorTrainResult {
  DetectorNet net;
  std::vector<DetectorLogRow> log;
};

/// Adam over seeded shuffled batches (the last partial batch is kept).
DetectorTrainResult train_detector(std::span<const Scene> scenes, const DetectorConfig& cfg,
                                   const DetectorProgress& progress = {});

/// Softmax per default box, background-argmax and sub-threshold boxes dropped,
/// offsets decoded and clipped, then NMS.
std::vector<Detection> detect(DetectorNet& net, const ImageChip& canvas, double conf_thr = 0.5);
std::vector<std::vector<Detection>> detect_batch(DetectorNet& net,
                                                 std::span<const ImageChip> canvases,
                                                 double conf_thr = 0.5, std::size_t chunk = 16);

Checkpoint detector_checkpoint(DetectorNet& net, const nlohmann::json& metadata);
DetectorNet load_detector(const Checkpoint& ckpt);

nlohmann::json detection_json(const Detection& det, std::size_t scene_id);
/// One JSON object per line: {scene_id, class_id, cx, cy, w, h, confidence}.
void write_detections_jsonl(std::ostream& out, std::size_t scene_id,
                            std::span<const Detection> dets);

}  // namespace dcssd

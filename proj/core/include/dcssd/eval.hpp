// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcssd/cascade.hpp"
#include "dcssd/scene.hpp"
#include "dcssd/ssd.hpp"

namespace dcssd {

struct EvalConfig {
  double iou_thr = 0.5;
  bool require_class = true;
  double conf_thr = 0.5;  // baseline arm threshold

  void validate() const;
  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

struct RateResult {
  double rate = 0.0;
  std::size_t matched = 0;
  std::size_t truths = 0;
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (detection, truth)
  bool no_truths = false;  // rate defined as 1.0
};

/// Greedy recall: detections in descending confidence (input order on ties) each take
/// the unmatched truth of highest IoU (lowest index on ties) when that IoU >= iou_thr
/// and, if required, the classes agree.
RateResult detection_rate(std::span<const Detection> dets, std::span<const GtBox> truths,
                          const EvalConfig& cfg);

/// Published reference values, printed for context only.
struct PaperReference {
  static constexpr double kSsdOnly = 0.355;
  static constexpr double kDcganSsd = 0.807;
};

struct SceneRow {
  std::size_t id = 0;
  double degradation_level = 0.0;
  std::size_t truths = 0;
  double baseline_rate = 0.0;
  double cascade_rate = 0.0;
  std::size_t baseline_matched = 0;
  std::size_t cascade_matched = 0;
  std::size_t baseline_detections = 0;
  std::size_t cascade_detections = 0;
  std::size_t candidates = 0;
  std::size_t promoted = 0;
};

struct LevelRow {
  double degradation_level = 0.0;
  std::size_t scenes = 0;
  std::size_t truths = 0;
  double baseline = 0.0;
  double cascade = 0.0;
};

struct ComparisonReport {
  nlohmann::json config;
  nlohmann::json seeds;
  std::vector<SceneRow> scenes;
  std::vector<LevelRow> levels;  // ascending degradation level
  double baseline = 0.0;         // micro-averaged detection rate
  double cascade = 0.0;
  double baseline_precision = 0.0;
  double cascade_precision = 0.0;

  nlohmann::json to_json() const;
};

/// Both arms on every scene; scene i's cascade candidates use seed derive_seed(seed, i).
ComparisonReport run_comparison(std::span<const Scene> scenes, CascadeModels& models,
                                const CascadeConfig& cascade_cfg, const EvalConfig& eval_cfg,
                                std::uint64_t seed);

/// report.json, report.csv and detection_rate_by_level.png.
void emit_report(const ComparisonReport& report, const std::filesystem::path& out_dir);

}  // namespace dcssd

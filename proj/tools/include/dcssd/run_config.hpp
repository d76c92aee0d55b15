// SPDX-License-Identifier: Apache-2.0
//
// Declarative run configuration for the dcssd tool. One JSON document holds every stage's
// settings; all sections are optional and missing keys keep their built-in defaults.
//
//   {
//     "seed": 0, "workers": 1,
//     "paths":      {"data_dir", "gan", "classifier", "detector", "train_scenes", "scenes"},
//     "gan":        {"batch_size", "epochs", "learning_rate", "beta1", "beta2",
//                    "checkpoint_every", "architecture", "records"},
//     "classifier": {"l2_lambda", "max_iterations", "gradient_tolerance", "records",
//                    "test_records"},
//     "detector":   DetectorConfig keys without "seed",
//     "train_bench", "bench": {"scene_count", "canvas_size", "min_objects", "max_objects",
//                    "scale_factors", "box_side_per_scale", "side_jitter", "blur_sigma",
//                    "noise_sigma", "split"},
//     "cascade":    CascadeConfig keys (projection without "seed"),
//     "eval":       EvalConfig keys
//   }
//
// Relative paths resolve against the --out directory, so consecutive stages that share
// an output directory find each other's artifacts without extra flags. Stage seeds are
// derived from the global seed (see stage_seed) and may not be set per stage.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "dcssd/cascade.hpp"
#include "dcssd/eval.hpp"
#include "dcssd/features.hpp"
#include "dcssd/gan.hpp"
#include "dcssd/scene.hpp"
#include "dcssd/ssd.hpp"

namespace dcssd::cli {

struct RunPaths {
  std::filesystem::path data_dir = "cifar-10-batches-bin";
  std::filesystem::path gan = "gan.ckpt";
  std::filesystem::path classifier = "classifier.ckpt";
  std::filesystem::path detector = "detector.ckpt";
  std::filesystem::path train_scenes = "train_scenes";
  std::filesystem::path scenes = "scenes";
};

struct GanStage {
  GanTrainConfig train;
  std::size_t records = 0;  // leading train records used; 0 = all
};

struct ClassifierStage {
  LinearTrainConfig train;
  std::size_t records = 10000;
  std::size_t test_records = 1000;  // held-out accuracy printed after training; 0 skips
};

struct BenchStage {
  BenchmarkSpec spec;
  CifarSplit split = CifarSplit::Test;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  RunPaths paths;
  GanStage gan;
  ClassifierStage classifier;
  DetectorConfig detector;
  BenchStage train_bench;
  BenchStage bench;
  CascadeConfig cascade;
  EvalConfig eval;

  RunConfig();

  /// Throws std::invalid_argument on unknown keys, per-stage seeds or invalid values.
  static RunConfig from_json(const nlohmann::json& j);
  /// Fully resolved echo; from_json(to_json()) reproduces the configuration.
  nlohmann::json to_json() const;
  void validate() const;
};

/// Reads a JSON config file. Missing or unparsable files raise DataError naming the path.
RunConfig load_run_config(const std::filesystem::path& path);

/// Per-stage seeds: derive_seed(global, index) with a fixed index per stage.
enum class Stage : std::uint64_t {
  Gan = 1, Classifier = 2, Detector = 3, TrainBench = 4, Bench = 5, Cascade = 6, Enhance = 7
};
std::uint64_t stage_seed(const RunConfig& cfg, Stage stage);

/// `p` if absolute, else `out / p`.
std::filesystem::path resolve(const std::filesystem::path& out, const std::filesystem::path& p);

}  // namespace dcssd::cli

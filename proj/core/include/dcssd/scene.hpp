// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcssd/box.hpp"
#include "dcssd/cifar.hpp"
#include "dcssd/image.hpp"

namespace dcssd {

inline constexpr double kMaxTruthOverlap = 0.3;

struct GtBox {
  Box box;
  int class_id = 0;
};

/// Simulated distance: resolution loss, optical blur and sensor noise.
struct DegradationSpec {
  double scale_factor = 1.0;  // (0, 1]
  double blur_sigma = 0.0;    // pixels, applied at the reduced resolution
  double noise_sigma = 0.0;   // amplitude in [-1, 1] units

  void validate() const;
  friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

/// Down -> blur -> noise -> bilinear up -> clamp; output keeps the input size.
ImageChip degrade(const ImageChip& chip, const DegradationSpec& spec, std::uint64_t seed);

/// ceil(scale * n) with a tolerance for representation error; throws if < 1.
std::size_t degraded_extent(std::size_t n, double scale_factor);

struct ObjectProvenance {
  std::int64_t source_index = -1;  // CIFAR record index, -1 when unknown
  Box placement;
  DegradationSpec degradation;
};

struct Scene {
  ImageChip canvas;
  std::vector<GtBox> truths;
  std::vector<ObjectProvenance> provenance;
  double degradation_level = 1.0;  // shared scale factor of the scene's objects
};

struct SceneObject {
  ImageChip chip;
  int class_id = 0;
  std::int64_t source_index = -1;
};

struct Placement {
  Box box;
  DegradationSpec degradation;
};

/// Pixel rectangle [y0,y1) x [x0,x1) covered by a normalized box on an S x S canvas.
struct PixelRect {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;
};
PixelRect pixel_rect(const Box& box, std::size_t canvas_size);

/// Seeded smooth background in [-0.2, 0.2].
ImageChip smooth_background(std::size_t canvas_size, std::uint64_t seed);

Scene compose_scene(std::span<const SceneObject> objects, std::size_t canvas_size,
                    std::span<const Placement> placements, std::uint64_t seed);

/// Parameters of the synthetic distance benchmark.
struct BenchmarkSpec {
  std::size_t scene_count = 100;
  std::size_t canvas_size = 128;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::vector<double> scale_factors{0.25, 0.375, 0.5};
  double box_side_per_scale = 0.5;  // box side = scale_factor * this, jittered
  double side_jitter = 0.15;
  double blur_sigma = 0.5;
  double noise_sigma = 0.03;

  void validate() const;
};

/// Builds scenes from records; scene i uses seed base_seed + i and
/// degradation level scale_factors[i % levels].
std::vector<Scene> compose_benchmark(std::span<const CifarRecord> records,
                                     const BenchmarkSpec& spec, std::uint64_t base_seed,
                                     std::size_t workers = 1);

nlohmann::json scene_truths_json(const Scene& scene);

/// Directory of scene_NNNNN.png canvases with scene_NNNNN.json sidecars.
void write_scene_archive(const std::filesystem::path& dir, std::span<const Scene> scenes);
std::vector<Scene> read_scene_archive(const std::filesystem::path& dir);

}  // namespace dcssd

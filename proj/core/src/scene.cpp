// SPDX-License-Identifier: Apache-2.0
#include "dcssd/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "dcssd/errors.hpp"
#include "dcssd/png_io.hpp"
#include "dcssd/random.hpp"

namespace dcssd {

void DegradationSpec::validate() const {
  if (!(scale_factor > 0.0 && scale_factor <= 1.0)) {
    throw std::invalid_argument("DegradationSpec: scale_factor must lie in (0, 1]");
  }
  if (!(blur_sigma >= 0.0) || !(noise_sigma >= 0.0)) {
    throw std::invalid_argument("DegradationSpec: sigmas must be non-negative");
  }
}

std::size_t degraded_extent(std::size_t n, double scale_factor) {
  const double raw = std::ceil(scale_factor * static_cast<double>(n) - 1e-9);
  if (raw < 1.0) {
    throw std::invalid_argument("degrade: scale_factor " + std::to_string(scale_factor) +
                                " reduces a dimension of " + std::to_string(n) + " below 1");
  }
  return static_cast<std::size_t>(raw);
}

ImageChip degrade(const ImageChip& chip, const DegradationSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t h = degraded_extent(chip.height(), spec.scale_factor);
  const std::size_t w = degraded_extent(chip.width(), spec.scale_factor);
  ImageChip low = area_downsample(chip, h, w);
  low = gaussian_blur(low, spec.blur_sigma);
  if (spec.noise_sigma > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (auto& v : low.tensor()) v = static_cast<float>(v + noise(rng));
  }
  ImageChip out = resize_bilinear(low, chip.height(), chip.width());
  out.clamp_unit();
  return out;
}

PixelRect pixel_rect(const Box& box, std::size_t canvas_size) {
  const double s = static_cast<double>(canvas_size);
  auto to_px = [&](double v) {
    return static_cast<std::size_t>(std::clamp(std::lround(v * s), 0L, static_cast<long>(canvas_size)));
  };
  PixelRect r{to_px(box.y0()), to_px(box.x0()), to_px(box.y1()), to_px(box.x1())};
  if (r.y1 <= r.y0) r.y1 = std::min(canvas_size, r.y0 + 1), r.y0 = r.y1 - 1;
  if (r.x1 <= r.x0) r.x1 = std::min(canvas_size, r.x0 + 1), r.x0 = r.x1 - 1;
  return r;
}

ImageChip smooth_background(std::size_t canvas_size, std::uint64_t seed) {
  constexpr std::size_t kCoarse = 5;
  Rng rng(seed);
  ImageChip coarse(kCoarse, kCoarse);
  fill_uniform(coarse.tensor().span(), rng, -0.2, 0.2);
  // Bilinear weights are convex, so the upsampled canvas stays within [-0.2, 0.2].
  return resize_bilinear(coarse, canvas_size, canvas_size);
}

Scene compose_scene(std::span<const SceneObject> objects, std::size_t canvas_size,
                    std::span<const Placement> placements, std::uint64_t seed) {
  if (objects.size() != placements.size()) {
    throw std::invalid_argument("compose_scene: objects and placements differ in length");
  }
  constexpr double kTol = 1e-9;
  for (std::size_t i = 0; i < placements.size(); ++i) {
    const Box& b = placements[i].box;
    if (!(b.w > 0.0 && b.h > 0.0 && b.w <= 1.0 && b.h <= 1.0) || b.x0() < -kTol ||
        b.y0() < -kTol || b.x1() > 1.0 + kTol || b.y1() > 1.0 + kTol) {
      throw std::invalid_argument("compose_scene: placement " + std::to_string(i) +
                                  " lies outside the canvas");
    }
    placements[i].degradation.validate();
    for (std::size_t j = 0; j < i; ++j) {
      if (iou(b, placements[j].box) > kMaxTruthOverlap) {
        throw std::invalid_argument("compose_scene: placements " + std::to_string(j) + " and " +
                                    std::to_string(i) + " overlap beyond IoU 0.3");
      }
    }
  }

  Scene scene;
  scene.canvas = smooth_background(canvas_size, derive_seed(seed, 0));
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& p = placements[i];
    const ImageChip degraded = degrade(objects[i].chip, p.degradation, derive_seed(seed, i + 1));
    const PixelRect r = pixel_rect(p.box, canvas_size);
    const ImageChip patch = resize_bilinear(degraded, r.y1 - r.y0, r.x1 - r.x0);
    for (std::size_t c = 0; c < ImageChip::kChannels; ++c)
      for (std::size_t y = r.y0; y < r.y1; ++y)
        for (std::size_t x = r.x0; x < r.x1; ++x)
          scene.canvas.at(c, y, x) = patch.at(c, y - r.y0, x - r.x0);
    scene.truths.push_back({clip_unit(p.box), objects[i].class_id});
    scene.provenance.push_back({objects[i].source_index, p.box, p.degradation});
  }
  if (!placements.empty()) scene.degradation_level = placements.front().degradation.scale_factor;
  return scene;
}

void BenchmarkSpec::validate() const {
  if (canvas_size < 8) throw std::invalid_argument("BenchmarkSpec: canvas too small");
  if (min_objects < 1 || max_objects < min_objects) {
    throw std::invalid_argument("BenchmarkSpec: need 1 <= min_objects <= max_objects");
  }
  if (scale_factors.empty()) throw std::invalid_argument("BenchmarkSpec: no scale factors");
  for (double s : scale_factors) DegradationSpec{s, blur_sigma, noise_sigma}.validate();
  if (!(box_side_per_scale > 0.0) || !(side_jitter >= 0.0 && side_jitter < 1.0)) {
    throw std::invalid_argument("BenchmarkSpec: bad box size parameters");
  }
}

namespace {

Scene make_benchmark_scene(std::span<const CifarRecord> records, const BenchmarkSpec& spec,
                           std::uint64_t scene_seed, double level) {
  Rng rng(scene_seed);
  std::uniform_int_distribution<std::size_t> count_dist(spec.min_objects, spec.max_objects);
  std::uniform_int_distribution<std::size_t> record_dist(0, records.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = count_dist(rng);

  std::vector<SceneObject> objects;
  std::vector<Placement> placements;
  for (std::size_t k = 0; k < n; ++k) {
    const double side = std::min(
        0.95, level * spec.box_side_per_scale * (1.0 + spec.side_jitter * (2.0 * unit(rng) - 1.0)));
    // Rejection sampling keeps truths well separated (IoU <= 0.1, stricter than the cap).
    for (int attempt = 0; attempt < 200; ++attempt) {
      const Box b{0.5 * side + unit(rng) * (1.0 - side), 0.5 * side + unit(rng) * (1.0 - side),
                  side, side};
      const bool clear = std::all_of(placements.begin(), placements.end(),
                                     [&](const Placement& p) { return iou(p.box, b) <= 0.1; });
      if (!clear) continue;
      const std::size_t idx = record_dist(rng);
      objects.push_back({record_to_chip(records[idx]), records[idx].label,
                         static_cast<std::int64_t>(idx)});
      placements.push_back({b, {level, spec.blur_sigma, spec.noise_sigma}});
      break;
    }
  }
  Scene scene = compose_scene(objects, spec.canvas_size, placements, derive_seed(scene_seed, 7));
  scene.degradation_level = level;
  return scene;
}

}  // namespace

std::vector<Scene> compose_benchmark(std::span<const CifarRecord> records,
                                     const BenchmarkSpec& spec, std::uint64_t base_seed,
                                     std::size_t workers) {
  spec.validate();
  if (records.empty()) throw DataError("compose_benchmark: no source records");
  std::vector<Scene> scenes(spec.scene_count);
  auto build = [&](std::size_t i) {
    const double level = spec.scale_factors[i % spec.scale_factors.size()];
    scenes[i] = make_benchmark_scene(records, spec, base_seed + i, level);
  };
  workers = std::max<std::size_t>(1, std::min(workers, spec.scene_count));
  if (workers == 1) {
    for (std::size_t i = 0; i < spec.scene_count; ++i) build(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < spec.scene_count; i += workers) build(i);
      });
    }
  }
  return scenes;
}

nlohmann::json scene_truths_json(const Scene& scene) {
  nlohmann::json truths = nlohmann::json::array();
  for (const auto& t : scene.truths) {
    truths.push_back({{"class_id", t.class_id},
                      {"cx", t.box.cx},
                      {"cy", t.box.cy},
                      {"w", t.box.w},
                      {"h", t.box.h}});
  }
  return truths;
}

namespace {

std::string scene_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05zu", i);
  return buf;
}

Box box_from_json(const nlohmann::json& j) {
  return Box{j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("w").get<double>(),
             j.at("h").get<double>()};
}

}  // namespace

void write_scene_archive(const std::filesystem::path& dir, std::span<const Scene> scenes) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    write_chip_png(dir / (scene_stem(i) + ".png"), s.canvas);
    nlohmann::json prov = nlohmann::json::array();
    for (const auto& p : s.provenance) {
      prov.push_back({{"source_index", p.source_index},
                      {"placement",
                       {{"cx", p.placement.cx},
                        {"cy", p.placement.cy},
                        {"w", p.placement.w},
                        {"h", p.placement.h}}},
                      {"degradation",
                       {{"scale_factor", p.degradation.scale_factor},
                        {"blur_sigma", p.degradation.blur_sigma},
                        {"noise_sigma", p.degradation.noise_sigma}}}});
    }
    const nlohmann::json sidecar{{"scene_id", i},
                                 {"canvas_size", s.canvas.height()},
                                 {"degradation_level", s.degradation_level},
                                 {"truths", scene_truths_json(s)},
                                 {"provenance", prov}};
    std::ofstream out(dir / (scene_stem(i) + ".json"));
    if (!out) throw DataError("cannot write scene sidecar in " + dir.string());
    out << sidecar.dump(2) << '\n';
  }
}

std::vector<Scene> read_scene_archive(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("no scene archive at " + dir.string());
  std::vector<Scene> scenes;
  for (std::size_t i = 0;; ++i) {
    const auto json_path = dir / (scene_stem(i) + ".json");
    if (!std::filesystem::exists(json_path)) break;
    std::ifstream in(json_path);
    nlohmann::json j;
    try {
      in >> j;
      Scene s;
      s.canvas = read_chip_png(dir / (scene_stem(i) + ".png"));
      s.degradation_level = j.at("degradation_level").get<double>();
      for (const auto& t : j.at("truths")) {
        s.truths.push_back({box_from_json(t), t.at("class_id").get<int>()});
      }
      for (const auto& p : j.at("provenance")) {
        const auto& d = p.at("degradation");
        s.provenance.push_back({p.at("source_index").get<std::int64_t>(),
                                box_from_json(p.at("placement")),
                                {d.at("scale_factor").get<double>(), d.at("blur_sigma").get<double>(),
                                 d.at("noise_sigma").get<double>()}});
      }
      scenes.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed scene sidecar " + json_path.string() + ": " + e.what());
    }
  }
  return scenes;
}

}  // namespace dcssd

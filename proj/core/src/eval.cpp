// SPDX-License-Identifier: Apache-2.0
#include "dcssd/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "dcssd/errors.hpp"
#include "dcssd/png_io.hpp"
#include "dcssd/random.hpp"

namespace dcssd {

void EvalConfig::validate() const {
  if (!(iou_thr > 0.0 && iou_thr < 1.0)) throw std::invalid_argument("EvalConfig: iou_thr must lie in (0, 1)");
  if (!(conf_thr >= 0.0 && conf_thr <= 1.0)) throw std::invalid_argument("EvalConfig: conf_thr must lie in [0, 1]");
}

nlohmann::json EvalConfig::to_json() const {
  return {{"iou_thr", iou_thr}, {"require_class", require_class}, {"conf_thr", conf_thr}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  EvalConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "iou_thr") c.iou_thr = value.get<double>();
    else if (key == "require_class") c.require_class = value.get<bool>();
    else if (key == "conf_thr") c.conf_thr = value.get<double>();
    else throw std::invalid_argument("EvalConfig: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

RateResult detection_rate(std::span<const Detection> dets, std::span<const GtBox> truths,
                          const EvalConfig& cfg) {
  RateResult out;
  out.truths = truths.size();
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });
  std::vector<bool> taken(truths.size(), false);
  for (std::size_t di : order) {
    std::size_t best = truths.size();
    double best_iou = -1.0;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (taken[t]) continue;
      const double v = iou(dets[di].box, truths[t].box);
      if (v > best_iou) best_iou = v, best = t;
    }
    if (best == truths.size() || best_iou < cfg.iou_thr) continue;
    if (cfg.require_class && dets[di].class_id != truths[best].class_id) continue;
    taken[best] = true;
    out.matches.emplace_back(di, best);
  }
  out.matched = out.matches.size();
  if (truths.empty()) {
    out.no_truths = true;
    out.rate = 1.0;
  } else {
    out.rate = static_cast<double>(out.matched) / static_cast<double>(truths.size());
  }
  return out;
}

nlohmann::json ComparisonReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : scenes) {
    rows.push_back({{"id", s.id},
                    {"degradation_level", s.degradation_level},
                    {"truths", s.truths},
                    {"baseline_rate", s.baseline_rate},
                    {"cascade_rate", s.cascade_rate},
                    {"baseline_matched", s.baseline_matched},
                    {"cascade_matched", s.cascade_matched},
                    {"baseline_detections", s.baseline_detections},
                    {"cascade_detections", s.cascade_detections},
                    {"candidates", s.candidates},
                    {"promoted", s.promoted}});
  }
  nlohmann::json by_level = nlohmann::json::array();
  for (const auto& l : levels) {
    by_level.push_back({{"degradation_level", l.degradation_level},
                        {"scenes", l.scenes},
                        {"truths", l.truths},
                        {"baseline", l.baseline},
                        {"cascade", l.cascade}});
  }
  return {{"config", config},
          {"seeds", seeds},
          {"scenes", rows},
          {"levels", by_level},
          {"aggregate",
           {{"baseline", baseline},
            {"cascade", cascade},
            {"baseline_precision", baseline_precision},
            {"cascade_precision", cascade_precision}}},
          {"paper_reference",
           {{"ssd_only", PaperReference::kSsdOnly}, {"dcgan_ssd", PaperReference::kDcganSsd}}}};
}

ComparisonReport run_comparison(std::span<const Scene> scenes, CascadeModels& models,
                                const CascadeConfig& cascade_cfg, const EvalConfig& eval_cfg,
                                std::uint64_t seed) {
  if (scenes.empty()) throw std::invalid_argument("run_comparison: no scenes");
  cascade_cfg.validate();
  eval_cfg.validate();

  ComparisonReport report;
  report.config = {{"cascade", cascade_cfg.to_json()},
                   {"eval", eval_cfg.to_json()},
                   {"detector", models.detector.config().to_json()},
                   {"scene_count", scenes.size()}};
  nlohmann::json scene_seeds = nlohmann::json::array();

  struct Tally {
    std::size_t truths = 0, scenes = 0, base = 0, casc = 0;
  };
  std::map<double, Tally> tallies;
  std::size_t truths_total = 0, base_matched = 0, casc_matched = 0, base_dets = 0, casc_dets = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& scene = scenes[i];
    const std::uint64_t scene_seed = derive_seed(seed, i);
    scene_seeds.push_back(scene_seed);
    SceneRow row;
    try {
      // Both arms see the same canvas; pass 1 differs only in its threshold.
      const auto baseline = run_baseline(models.detector, scene.canvas, eval_cfg.conf_thr);
      const CascadeTrace trace = run_cascade(models, scene.canvas, cascade_cfg, scene_seed);
      const RateResult rb = detection_rate(baseline, scene.truths, eval_cfg);
      const RateResult rc = detection_rate(trace.final, scene.truths, eval_cfg);
      row = {i,
             scene.degradation_level,
             scene.truths.size(),
             rb.rate,
             rc.rate,
             rb.matched,
             rc.matched,
             baseline.size(),
             trace.final.size(),
             trace.candidates.size(),
             static_cast<std::size_t>(std::count_if(trace.candidates.begin(), trace.candidates.end(),
                                                    [](const RescueCandidate& c) { return c.promoted; }))};
    } catch (const DataError& e) {
      throw DataError("scene " + std::to_string(i) + ": " + e.what());
    } catch (const NumericalError& e) {
      throw NumericalError("scene " + std::to_string(i) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("scene " + std::to_string(i) + ": " + e.what());
    }
    Tally& t = tallies[row.degradation_level];
    t.truths += row.truths;
    ++t.scenes;
    t.base += row.baseline_matched;
    t.casc += row.cascade_matched;
    truths_total += row.truths;
    base_matched += row.baseline_matched;
    casc_matched += row.cascade_matched;
    base_dets += row.baseline_detections;
    casc_dets += row.cascade_detections;
    report.scenes.push_back(row);
  }
  auto ratio = [](std::size_t num, std::size_t den, double empty) {
    return den == 0 ? empty : static_cast<double>(num) / static_cast<double>(den);
  };
  report.baseline = ratio(base_matched, truths_total, 1.0);
  report.cascade = ratio(casc_matched, truths_total, 1.0);
  // Precision over an arm that produced nothing is reported as 0.
  report.baseline_precision = ratio(base_matched, base_dets, 0.0);
  report.cascade_precision = ratio(casc_matched, casc_dets, 0.0);
  for (const auto& [level, t] : tallies) {
    report.levels.push_back(
        {level, t.scenes, t.truths, ratio(t.base, t.truths, 1.0), ratio(t.casc, t.truths, 1.0)});
  }
  report.seeds = {{"base_seed", seed},
                  {"projection_seed", cascade_cfg.projection.seed},
                  {"scene_seeds", scene_seeds}};
  return report;
}

namespace {

struct Canvas {
  RgbImage img;
  Canvas(std::size_t w, std::size_t h) : img{w, h, std::vector<std::uint8_t>(w * h * 3, 255)} {}

  void put(long x, long y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) return;
    std::copy(c.begin(), c.end(), img.pixels.begin() + (y * static_cast<long>(img.width) + x) * 3);
  }
  void rect(long x0, long y0, long x1, long y1, std::array<std::uint8_t, 3> c) {
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) put(x, y, c);
  }
  void line(double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> c, long r) {
    const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
    const long n = std::max(1L, static_cast<long>(std::ceil(len)));
    for (long i = 0; i <= n; ++i) {
      const double t = static_cast<double>(i) / n;
      const long x = std::lround(x0 + t * (x1 - x0)), y = std::lround(y0 + t * (y1 - y0));
      rect(x - r, y - r, x + r, y + r, c);
    }
  }
};

void write_plot(const ComparisonReport& report, const std::filesystem::path& path) {
  constexpr long kW = 640, kH = 400, kLeft = 60, kRight = 20, kTop = 20, kBottom = 50;
  Canvas cv(kW, kH);
  const std::array<std::uint8_t, 3> grid{225, 225, 225}, axis{40, 40, 40},
      base_color{31, 119, 180}, casc_color{255, 127, 14};
  const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  for (int k = 0; k <= 4; ++k) {
    const double y = kTop + plot_h * (1.0 - k / 4.0);
    cv.line(kLeft, y, kW - kRight, y, grid, 0);
  }
  cv.line(kLeft, kTop, kLeft, kTop + plot_h, axis, 1);
  cv.line(kLeft, kTop + plot_h, kW - kRight, kTop + plot_h, axis, 1);

  const auto& levels = report.levels;
  if (!levels.empty()) {
    const double lo = levels.front().degradation_level, hi = levels.back().degradation_level;
    auto px = [&](double level) {
      return hi > lo ? kLeft + 20 + (plot_w - 40) * (level - lo) / (hi - lo) : kLeft + plot_w / 2;
    };
    auto py = [&](double rate) { return kTop + plot_h * (1.0 - std::clamp(rate, 0.0, 1.0)); };
    for (const auto& l : levels) cv.line(px(l.degradation_level), kTop + plot_h, px(l.degradation_level), kTop + plot_h + 6, axis, 0);
    auto series = [&](auto get, std::array<std::uint8_t, 3> color) {
      for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
        cv.line(px(levels[i].degradation_level), py(get(levels[i])),
                px(levels[i + 1].degradation_level), py(get(levels[i + 1])), color, 1);
      }
      for (const auto& l : levels) {
        const long x = std::lround(px(l.degradation_level)), y = std::lround(py(get(l)));
        cv.rect(x - 4, y - 4, x + 4, y + 4, color);
      }
    };
    series([](const LevelRow& l) { return l.baseline; }, base_color);
    series([](const LevelRow& l) { return l.cascade; }, casc_color);
  }
  // Legend swatches: baseline then cascade.
  cv.rect(kLeft + 10, kH - 30, kLeft + 30, kH - 20, base_color);
  cv.rect(kLeft + 50, kH - 30, kLeft + 70, kH - 20, casc_color);
  write_png(path, cv.img);
}

}  // namespace

void emit_report(const ComparisonReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create report directory " + out_dir.string() + ": " + ec.message());
  {
    std::ofstream out(out_dir / "report.json");
    if (!out) throw DataError("cannot write " + (out_dir / "report.json").string());
    out << report.to_json().dump(2) << '\n';
  }
  {
    std::ofstream out(out_dir / "report.csv");
    if (!out) throw DataError("cannot write " + (out_dir / "report.csv").string());
    out << "id,baseline_rate,cascade_rate,truths,degradation_level,baseline_matched,"
           "cascade_matched,baseline_detections,cascade_detections,candidates,promoted\n";
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    for (const auto& s : report.scenes) {
      out << s.id << ',' << num(s.baseline_rate) << ',' << num(s.cascade_rate) << ',' << s.truths
          << ',' << num(s.degradation_level) << ',' << s.baseline_matched << ','
          << s.cascade_matched << ',' << s.baseline_detections << ',' << s.cascade_detections
          << ',' << s.candidates << ',' << s.promoted << '\n';
    }
  }
  write_plot(report, out_dir / "detection_rate_by_level.png");
}

}  // namespace dcssd

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "dcssd/cifar.hpp"
#include "dcssd/ssd.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace dcssd {
namespace {

using testing::central_differences;
using testing::relative_error;

std::vector<GridSpec> standard_grids() {
  const std::vector<double> r{1.0, 2.0, 0.5};
  return {{16, r}, {8, r}, {4, r}};
}

TEST(DefaultBoxes, ScaleLadderInterpolatesLinearly) {
  const auto set = build_default_boxes(standard_grids(), 0.2, 0.9);
  ASSERT_EQ(set.layout.size(), 3u);
  EXPECT_NEAR(set.layout[0].scale, 0.2, 1e-12);
  EXPECT_NEAR(set.layout[1].scale, 0.55, 1e-12);
  EXPECT_NEAR(set.layout[2].scale, 0.9, 1e-12);
}

TEST(DefaultBoxes, StandardGeometryHas1344Boxes) {
  const auto set = build_default_boxes(standard_grids(), 0.1, 0.4);
  EXPECT_EQ(set.size(), 1344u);
  EXPECT_EQ(set.layout[0].boxes_per_cell, 4u);
  DetectorNet net;
  EXPECT_EQ(net.defaults().size(), 1344u);
}

TEST(DefaultBoxes, CountFormulaHoldsForRandomLayouts) {
  Rng rng(1);
  std::uniform_int_distribution<std::size_t> maps(1, 4), size(1, 9), nratio(1, 4);
  std::uniform_real_distribution<double> ratio(0.3, 3.0);
  for (int t = 0; t < 40; ++t) {
    std::vector<GridSpec> grids(maps(rng));
    std::size_t expected = 0;
    for (auto& g : grids) {
      g.size = size(rng);
      g.ratios.clear();
      for (std::size_t k = nratio(rng); k > 0; --k) g.ratios.push_back(ratio(rng));
      g.ratios.push_back(1.0);
      expected += g.size * g.size * (g.ratios.size() + 1);
    }
    EXPECT_EQ(build_default_boxes(grids, 0.15, 0.8).size(), expected);
  }
}

TEST(DefaultBoxes, CornerCellIsCenteredThenClipped) {
  const std::vector<GridSpec> one{{4, {1.0}}};
  const auto set = build_default_boxes(one, 0.9, 1.0, false);
  ASSERT_EQ(set.size(), 16u);
  // Unclipped: center (0.125, 0.125), side 0.9.
  const Box want = Box::from_corners(0.0, 0.0, 0.125 + 0.45, 0.125 + 0.45);
  EXPECT_NEAR(set.boxes[0].x1(), want.x1(), 1e-12);
  EXPECT_NEAR(set.boxes[0].y1(), want.y1(), 1e-12);
  EXPECT_NEAR(set.boxes[0].x0(), 0.0, 1e-12);
  EXPECT_THROW(build_default_boxes(one, 0.5, 0.4), std::invalid_argument);
}

TEST(Iou, ExamplesAndProperties) {
  const Box a = Box::from_corners(0, 0, 2 / 3.0, 2 / 3.0), b = Box::from_corners(1 / 3.0, 1 / 3.0, 1, 1);
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-12);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(Box::from_corners(0, 0, 0.2, 0.2), Box::from_corners(0.5, 0.5, 0.7, 0.7)), 0.0);
  Rng rng(2);
  for (int t = 0; t < 2000; ++t) {
    const Box p = testing::dyadic_box(rng), q = testing::dyadic_box(rng);
    const double v = iou(p, q);
    EXPECT_EQ(v, iou(q, p));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_EQ(v, testing::iou_oracle(p, q));
  }
}

TEST(Offsets, WorkedExampleRoundTripAndErrors) {
  const Box def{0.5, 0.5, 0.2, 0.2};
  const auto e = encode_offsets({0.52, 0.5, 0.4, 0.2}, def);
  EXPECT_NEAR(e[0], 1.0, 1e-12);
  EXPECT_NEAR(e[1], 0.0, 1e-12);
  EXPECT_NEAR(e[2], std::log(2.0) / 0.2, 1e-12);
  EXPECT_NEAR(e[3], 0.0, 1e-12);
  for (double v : encode_offsets(def, def)) EXPECT_EQ(v, 0.0);
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int t = 0; t < 500; ++t) {
    const Box g{u(rng), u(rng), u(rng), u(rng)}, d{u(rng), u(rng), u(rng), u(rng)};
    const Box back = decode_offsets(encode_offsets(g, d), d);
    EXPECT_NEAR(back.cx, g.cx, 1e-9);
    EXPECT_NEAR(back.cy, g.cy, 1e-9);
    EXPECT_NEAR(back.w, g.w, 1e-9);
    EXPECT_NEAR(back.h, g.h, 1e-9);
  }
  EXPECT_THROW(encode_offsets({0.5, 0.5, 0.0, 0.2}, def), std::invalid_argument);
}

TEST(Match, NoTruthsAndForcedMatch) {
  const auto defaults = build_default_boxes(standard_grids(), 0.1, 0.4).boxes;
  const MatchResult none = match_boxes({}, defaults);
  EXPECT_TRUE(std::all_of(none.assigned_truth.begin(), none.assigned_truth.end(),
                          [](int t) { return t == kBackgroundMatch; }));
  const std::vector<GtBox> exact{{defaults[77], 3}};
  const MatchResult m = match_boxes(exact, defaults, 0.9);
  EXPECT_EQ(m.best_default[0], 77u);
  EXPECT_EQ(m.assigned_truth[77], 0);
  EXPECT_THROW(match_boxes(exact, std::vector<Box>{}), std::invalid_argument);
}

TEST(Match, EqualsExhaustiveOracleUpTo10TruthsBy500Defaults) {
  Rng rng(4);
  std::uniform_int_distribution<int> nt(0, 10), nd(1, 500), cls(0, 9);
  for (int t = 0; t < 60; ++t) {
    std::vector<Box> defaults;
    for (int k = nd(rng); k > 0; --k) defaults.push_back(testing::dyadic_box(rng));
    std::vector<GtBox> truths;
    for (int k = nt(rng); k > 0; --k) truths.push_back({testing::dyadic_box(rng), cls(rng)});
    const double tau = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
    const MatchResult got = match_boxes(truths, defaults, tau);
    const MatchResult want = testing::match_oracle(truths, defaults, tau);
    EXPECT_EQ(got.assigned_truth, want.assigned_truth);
    EXPECT_EQ(got.best_default, want.best_default);
  }
}

TEST(Nms, SmallExamples) {
  const Detection a{{0.5, 0.5, 0.2, 0.2}, 1, 0.9}, b{{0.5, 0.5, 0.2, 0.2}, 1, 0.8};
  const std::vector<Detection> single{a};
  const auto one = nms(single);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].confidence, 0.9);
  const std::vector<Detection> pair{b, a};
  const auto kept = nms(pair);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].confidence, 0.9);
  // Different classes never suppress each other.
  const std::vector<Detection> classes{a, {b.box, 2, 0.8}};
  EXPECT_EQ(nms(classes).size(), 2u);
}

TEST(Nms, EqualsOracleAndIsIdempotent) {
  Rng rng(5);
  std::uniform_int_distribution<int> cls(0, 2), q(1, 10);
  std::uniform_real_distribution<double> thr(0.2, 0.8);
  for (int t = 0; t < 200; ++t) {
    std::vector<Detection> dets;
    for (int k = 0; k < 50; ++k) {
      Box b = testing::dyadic_box(rng);
      if (k > 0 && cls(rng) != 0) {
        b = dets[static_cast<std::size_t>(k / 2)].box;
        b.cy += 2.0 / 256;
      }
      dets.push_back({b, cls(rng), q(rng) / 10.0});
    }
    const double th = thr(rng);
    const auto once = nms(dets, th, 200);
    const auto want = testing::nms_oracle(dets, th, 200);
    ASSERT_EQ(once.size(), want.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
      EXPECT_EQ(once[i].box, want[i].box);
      EXPECT_EQ(once[i].confidence, want[i].confidence);
    }
    const auto twice = nms(once, th, 200);
    ASSERT_EQ(twice.size(), once.size());
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(twice[i].box, once[i].box);
    EXPECT_LE(nms(dets, th, 3).size(), 3u);
  }
}

// One image, eight defaults, two truths.
struct Tiny {
  std::vector<Box> defaults;
  std::vector<MatchTargets> targets;
};

Tiny tiny_instance() {
  Tiny t;
  for (int k = 0; k < 8; ++k) t.defaults.push_back({0.125 + 0.25 * (k % 4), 0.25 + 0.5 * (k / 4), 0.25, 0.4});
  const std::vector<GtBox> truths{{{0.13, 0.26, 0.3, 0.35}, 2}, {{0.6, 0.74, 0.22, 0.45}, 7}};
  t.targets.push_back(make_targets(truths, t.defaults, match_boxes(truths, t.defaults)));
  return t;
}

TEST(Multibox, PerfectPredictionsGiveNearZeroLoss) {
  const Tiny t = tiny_instance();
  TensorD logits({1, 8, kScoreClasses}, 0.0), offsets({1, 8, kOffsetDims}, 0.0);
  for (std::size_t d = 0; d < 8; ++d) {
    logits[d * kScoreClasses + static_cast<std::size_t>(t.targets[0].labels[d])] = 40.0;
    for (std::size_t k = 0; k < 4; ++k) offsets[d * 4 + k] = t.targets[0].offsets[d][k];
  }
  const auto l = multibox_loss(logits, offsets, std::span<const MatchTargets>(t.targets));
  EXPECT_LT(l.loss, 1e-12);
  EXPECT_GE(l.positives, 2u);
}

TEST(Multibox, AlphaScalesOnlyTheLocalizationTerm) {
  const Tiny t = tiny_instance();
  TensorD logits({1, 8, kScoreClasses}), offsets({1, 8, kOffsetDims});
  Rng rng(6);
  fill_normal(logits.span(), rng);
  fill_normal(offsets.span(), rng);
  const auto l1 = multibox_loss(logits, offsets, std::span<const MatchTargets>(t.targets), 1.0);
  const auto l2 = multibox_loss(logits, offsets, std::span<const MatchTargets>(t.targets), 2.0);
  const double n = static_cast<double>(l1.positives);
  EXPECT_NEAR(l1.loss, (l1.conf_loss + l1.loc_loss) / n, 1e-12);
  EXPECT_NEAR(l2.loss - l1.loss, l1.loc_loss / n, 1e-12);
  EXPECT_EQ(l1.conf_loss, l2.conf_loss);
}

TEST(Multibox, GradientsMatchFiniteDifferences) {
  const Tiny t = tiny_instance();
  TensorD logits({1, 8, kScoreClasses}), offsets({1, 8, kOffsetDims});
  Rng rng(7);
  fill_normal(logits.span(), rng, 0.0, 2.0);
  fill_normal(offsets.span(), rng, 0.0, 0.5);
  const auto l = multibox_loss(logits, offsets, std::span<const MatchTargets>(t.targets));
  auto loss = [&] { return multibox_loss(logits, offsets, std::span<const MatchTargets>(t.targets)).loss; };
  auto a = central_differences(logits.span(), l.grad_logits.span(), loss, 1000, 1);
  auto b = central_differences(offsets.span(), l.grad_offsets.span(), loss, 1000, 2);
  EXPECT_LT(relative_error(a.analytic, a.numeric), 1e-4);
  EXPECT_LT(relative_error(b.analytic, b.numeric), 1e-4);
}

TEST(Multibox, HardNegativesAreCappedByRatio) {
  const Tiny t = tiny_instance();
  TensorD logits({1, 8, kScoreClasses}), offsets({1, 8, kOffsetDims});
  Rng rng(8);
  fill_normal(logits.span(), rng);
  const auto l = multibox_loss(logits, offsets, std::span<const MatchTargets>(t.targets), 1.0, 0.0);
  // With no negatives, background rows carry no gradient.
  for (std::size_t d = 0; d < 8; ++d) {
    if (t.targets[0].labels[d] != 0) continue;
    for (std::size_t c = 0; c < kScoreClasses; ++c) EXPECT_EQ(l.grad_logits[d * kScoreClasses + c], 0.0);
  }
}

TEST(Multibox, RejectsBatchesWithoutPositives) {
  const Tiny t = tiny_instance();
  std::vector<MatchTargets> empty{make_targets({}, t.defaults, match_boxes({}, t.defaults))};
  TensorD logits({1, 8, kScoreClasses}), offsets({1, 8, kOffsetDims});
  EXPECT_THROW(multibox_loss(logits, offsets, std::span<const MatchTargets>(empty)), std::invalid_argument);
}

DetectorConfig small_detector() {
  DetectorConfig cfg;
  cfg.backbone_channels = {8, 16, 16, 16, 16};
  cfg.seed = 3;
  return cfg;
}

std::vector<Scene> some_scenes(std::size_t n, std::uint64_t seed) {
  BenchmarkSpec spec;
  spec.scene_count = n;
  return compose_benchmark(synthesize_cifar_like(40, seed), spec, seed);
}

TEST(TrainDetector, OneSceneOneEpochIsOneIteration) {
  auto cfg = small_detector();
  cfg.epochs = 1;
  const auto scenes = some_scenes(1, 1);
  EXPECT_EQ(train_detector(scenes, cfg).log.size(), 1u);
  EXPECT_THROW(train_detector(std::vector<Scene>{}, cfg), std::invalid_argument);
}

TEST(TrainDetector, SmokeRunReducesLoss) {
  auto cfg = small_detector();
  cfg.batch_size = 4;
  cfg.epochs = 40;  // 5 batches per epoch -> 200 iterations
  const auto scenes = some_scenes(20, 2);
  const auto result = train_detector(scenes, cfg);
  ASSERT_EQ(result.log.size(), 200u);
  double lead = 0.0, trail = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    lead += result.log[i].loss;
    trail += result.log[150 + i].loss;
  }
  EXPECT_LT(trail, lead);
}

TEST(TrainDetector, DeterministicGivenSeed) {
  auto cfg = small_detector();
  cfg.epochs = 2;
  cfg.batch_size = 2;
  const auto scenes = some_scenes(4, 3);
  auto a = train_detector(scenes, cfg);
  auto b = train_detector(scenes, cfg);
  EXPECT_EQ(encode_checkpoint(detector_checkpoint(a.net, {})), encode_checkpoint(detector_checkpoint(b.net, {})));
}

TEST(Detect, ThresholdShapeAndClippingContracts) {
  DetectorNet net(small_detector());
  net.initialize(4);
  const auto scenes = some_scenes(2, 4);
  EXPECT_TRUE(detect(net, scenes[0].canvas, 1.0).empty());
  const auto dets = detect(net, scenes[0].canvas, 0.0);
  for (const auto& d : dets) {
    EXPECT_GE(d.box.x0(), -1e-12);
    EXPECT_GE(d.box.y0(), -1e-12);
    EXPECT_LE(d.box.x1(), 1.0 + 1e-12);
    EXPECT_LE(d.box.y1(), 1.0 + 1e-12);
    EXPECT_GE(d.class_id, 0);
    EXPECT_LT(d.class_id, 10);
  }
  const auto again = detect(net, scenes[0].canvas, 0.0);
  ASSERT_EQ(again.size(), dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) EXPECT_EQ(again[i].box, dets[i].box);
  const auto batch = detect_batch(net, std::vector<ImageChip>{scenes[1].canvas, scenes[0].canvas}, 0.0);
  ASSERT_EQ(batch[1].size(), dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) EXPECT_NEAR(batch[1][i].confidence, dets[i].confidence, 1e-5);
  EXPECT_THROW(detect(net, ImageChip(64, 64), 0.5), std::invalid_argument);
}

TEST(Detector, ConfigJsonAndCheckpointRoundTrip) {
  const auto cfg = small_detector();
  const auto back = DetectorConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  auto j = cfg.to_json();
  j["bogus"] = 1;
  EXPECT_THROW(DetectorConfig::from_json(j), std::invalid_argument);

  DetectorNet net(cfg);
  net.initialize(9);
  DetectorNet loaded = load_detector(decode_checkpoint(encode_checkpoint(detector_checkpoint(net, {}))));
  const auto scenes = some_scenes(1, 5);
  const auto a = detect(net, scenes[0].canvas, 0.05);
  const auto b = detect(loaded, scenes[0].canvas, 0.05);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].confidence, b[i].confidence);

  std::ostringstream out;
  write_detections_jsonl(out, 4, a);
  std::istringstream in(out.str());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto row = nlohmann::json::parse(line);
    EXPECT_EQ(row.at("scene_id").get<int>(), 4);
    ++lines;
  }
  EXPECT_EQ(lines, a.size());
}

}  // namespace
}  // namespace dcssd

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "dcssd/cascade.hpp"
#include "dcssd/cifar.hpp"
#include "dcssd/eval.hpp"
#include "dcssd/png_io.hpp"

namespace dcssd {
namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// detection_rate

TEST(DetectionRate, AllMatchedNoneMatchedAndNoTruths) {
  const std::vector<GtBox> truths{{{0.2, 0.2, 0.2, 0.2}, 1}, {{0.7, 0.7, 0.2, 0.2}, 4}};
  const std::vector<Detection> perfect{{truths[0].box, 1, 0.9}, {truths[1].box, 4, 0.8}};
  EXPECT_EQ(detection_rate(perfect, truths, {}).rate, 1.0);
  EXPECT_EQ(detection_rate({}, truths, {}).rate, 0.0);
  const auto none = detection_rate(perfect, {}, {});
  EXPECT_EQ(none.rate, 1.0);
  EXPECT_TRUE(none.no_truths);
}

// A box sharing the truth's height whose horizontal overlap gives the requested IoU.
Box shifted_for_iou(const Box& t, double target) {
  // IoU of equal boxes shifted by s along x: (w - s) / (w + s).
  const double s = t.w * (1.0 - target) / (1.0 + target);
  return {t.cx + s, t.cy, t.w, t.h};
}

TEST(DetectionRate, WorkedExampleTwoOfThree) {
  const std::vector<GtBox> truths{{{0.2, 0.2, 0.2, 0.2}, 0}, {{0.5, 0.6, 0.2, 0.2}, 1}, {{0.8, 0.2, 0.2, 0.2}, 2}};
  const std::vector<Detection> dets{{shifted_for_iou(truths[0].box, 0.6), 0, 0.7},
                                    {shifted_for_iou(truths[1].box, 0.6), 1, 0.6},
                                    {shifted_for_iou(truths[2].box, 0.9), 5, 0.95}};
  const auto r = detection_rate(dets, truths, {});
  EXPECT_NEAR(r.rate, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.matched, 2u);
  // Class-agnostic reading counts the wrong-class hit too.
  EvalConfig any;
  any.require_class = false;
  EXPECT_EQ(detection_rate(dets, truths, any).matched, 3u);
}

// Maximum number of truths any one-to-one assignment can match.
std::size_t best_assignment(const std::vector<Detection>& dets, const std::vector<GtBox>& truths, double thr) {
  std::vector<std::size_t> perm(truths.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t m = 0;
    for (std::size_t i = 0; i < std::min(dets.size(), perm.size()); ++i) {
      const auto& t = truths[perm[i]];
      m += iou(dets[i].box, t.box) >= thr && dets[i].class_id == t.class_id;
    }
    best = std::max(best, m);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

TEST(DetectionRate, GreedyNeverDoubleMatchesAndAgreesWithOracleOnSeparatedTruths) {
  Rng rng(3);
  std::uniform_real_distribution<double> jitter(-0.02, 0.02), conf(0.1, 0.99);
  std::uniform_int_distribution<int> cls(0, 2);
  for (int t = 0; t < 200; ++t) {
    std::vector<GtBox> truths;
    for (int k = 0; k < 4; ++k) truths.push_back({{0.15 + 0.23 * k, 0.5, 0.15, 0.3}, cls(rng)});
    std::vector<Detection> dets;
    for (int k = 0; k < 4; ++k) {
      const Box& b = truths[static_cast<std::size_t>(k)].box;
      dets.push_back({{b.cx + jitter(rng), b.cy + jitter(rng), b.w, b.h}, cls(rng), conf(rng)});
    }
    const auto r = detection_rate(dets, truths, {});
    std::set<std::size_t> seen_d, seen_t;
    for (auto [d, tr] : r.matches) {
      EXPECT_TRUE(seen_d.insert(d).second);
      EXPECT_TRUE(seen_t.insert(tr).second);
    }
    EXPECT_EQ(r.matched, best_assignment(dets, truths, 0.5));
    // Appending a correct detection never lowers the rate.
    auto more = dets;
    more.push_back({truths[0].box, truths[0].class_id, 0.05});
    EXPECT_GE(detection_rate(more, truths, {}).rate, r.rate);
  }
}

// ---------------------------------------------------------------------------
// cascade

class CascadeTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto arch = GanArchitecture::miniature(16);
    g_ = new GeneratorNet(arch);
    d_ = new DiscriminatorNet(arch);
    g_->initialize(1);
    d_->initialize(2);
    const auto recs = synthesize_cifar_like(60, 3);
    std::vector<int> labels;
    for (const auto& r : recs) labels.push_back(r.label);
    LinearTrainConfig lc;
    lc.max_iterations = 100;
    lc.l2_lambda = 1e-2;
    clf_ = new LinearClassifier(
        train_linear(extract_features_batch(*d_, records_to_chips(recs)), labels, lc).classifier);
    DetectorConfig dc;
    dc.backbone_channels = {8, 8, 8, 8, 8};
    net_ = new DetectorNet(dc);
    net_->initialize(4);
    BenchmarkSpec spec;
    spec.scene_count = 6;
    scenes_ = new std::vector<Scene>(compose_benchmark(recs, spec, 9));
  }
  static void TearDownTestSuite() {
    delete g_;
    delete d_;
    delete clf_;
    delete net_;
    delete scenes_;
  }

  CascadeModels models() { return {*g_, *d_, *clf_, *net_}; }

  static CascadeConfig quick(double t_rescore) {
    CascadeConfig c;
    c.t_low = 0.05;
    c.t_high = 0.12;
    c.small_max_area = 0.5;
    c.t_rescore = t_rescore;
    c.projection.steps = 3;
    c.projection.restarts = 1;
    return c;
  }

  static std::vector<Detection> band_detections() {
    // Small and large boxes across the thresholds of quick().
    return {{{0.3, 0.3, 0.1, 0.1}, 2, 0.5},   {{0.7, 0.3, 0.2, 0.2}, 3, 0.08},
            {{0.3, 0.7, 0.15, 0.1}, 4, 0.1}, {{0.8, 0.8, 0.9, 0.9}, 5, 0.09},
            {{0.31, 0.3, 0.1, 0.1}, 2, 0.07}};
  }

  static GeneratorNet* g_;
  static DiscriminatorNet* d_;
  static LinearClassifier* clf_;
  static DetectorNet* net_;
  static std::vector<Scene>* scenes_;
};

GeneratorNet* CascadeTest::g_ = nullptr;
DiscriminatorNet* CascadeTest::d_ = nullptr;
LinearClassifier* CascadeTest::clf_ = nullptr;
DetectorNet* CascadeTest::net_ = nullptr;
std::vector<Scene>* CascadeTest::scenes_ = nullptr;

TEST_F(CascadeTest, NoPassOneDetectionsMeansNothingToDo) {
  auto m = models();
  const auto trace = cascade_from_pass1(m, (*scenes_)[0].canvas, {}, quick(0.5), 0);
  EXPECT_TRUE(trace.final.empty());
  EXPECT_TRUE(trace.candidates.empty());
}

TEST_F(CascadeTest, BandRoutingAndPromotionInvariants) {
  auto m = models();
  const auto cfg = quick(0.11);
  const auto trace = cascade_from_pass1(m, (*scenes_)[0].canvas, band_detections(), cfg, 5);
  ASSERT_EQ(trace.pass_through.size(), 1u);
  // The 0.9 x 0.9 box is too large to rescue.
  ASSERT_EQ(trace.candidates.size(), 3u);
  std::size_t promoted = 0;
  for (const auto& c : trace.candidates) {
    EXPECT_EQ(c.enhanced.height(), 32u);
    if (!c.promoted) continue;
    ++promoted;
    EXPECT_LE(c.detection.box.area(), cfg.small_max_area);
    EXPECT_GE(c.confidence, cfg.t_rescore);
  }
  EXPECT_LE(trace.final.size(), trace.pass_through.size() + promoted);
  for (const auto& f : trace.final) {
    if (f.confidence >= cfg.t_high && f.box == trace.pass_through[0].box) return;
  }
  // The pass-through box may only be missing if a more confident same-class box suppressed it.
  for (const auto& f : trace.final) {
    if (f.class_id == trace.pass_through[0].class_id && iou(f.box, trace.pass_through[0].box) > 0.45) return;
  }
  ADD_FAILURE() << "pass-through detection vanished";
}

TEST_F(CascadeTest, DisabledPromotionEqualsBaselineAtHighThreshold) {
  auto m = models();
  const auto cfg = quick(1.0);
  for (const auto& s : *scenes_) {
    const auto trace = run_cascade(m, s.canvas, cfg, 1);
    const auto base = run_baseline(*net_, s.canvas, cfg.t_high);
    ASSERT_EQ(trace.final.size(), base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      EXPECT_EQ(trace.final[i].box, base[i].box);
      EXPECT_EQ(trace.final[i].confidence, base[i].confidence);
    }
  }
}

TEST_F(CascadeTest, BaselineIsDetectAndEmptyAtUnitThreshold) {
  const auto& canvas = (*scenes_)[1].canvas;
  const auto a = run_baseline(*net_, canvas, 0.05), b = detect(*net_, canvas, 0.05);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].box, b[i].box);
  EXPECT_TRUE(run_baseline(*net_, canvas, 1.0).empty());
}

TEST_F(CascadeTest, ConfigValidationAndJson) {
  CascadeConfig c;
  EXPECT_NO_THROW(c.validate());
  c.t_low = 0.6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.small_max_area = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  EXPECT_EQ(CascadeConfig::from_json(c.to_json()).to_json(), c.to_json());
  auto j = c.to_json();
  j["t_mid"] = 0.3;
  EXPECT_THROW(CascadeConfig::from_json(j), std::invalid_argument);
  const auto trace_json = cascade_trace_json({});
  EXPECT_TRUE(trace_json.contains("pass1"));
  EXPECT_TRUE(trace_json.contains("final"));
}

// ---------------------------------------------------------------------------
// comparison and report

TEST_F(CascadeTest, ComparisonWithPromotionDisabledGivesIdenticalArms) {
  auto m = models();
  const auto report = run_comparison(*scenes_, m, quick(1.0), {0.5, true, 0.12}, 3);
  ASSERT_EQ(report.scenes.size(), scenes_->size());
  EXPECT_EQ(report.baseline, report.cascade);
  for (const auto& row : report.scenes) EXPECT_EQ(row.baseline_rate, row.cascade_rate);

  // Levels and the aggregate count objects, not scenes.
  std::size_t matched = 0, truths = 0;
  for (const auto& row : report.scenes) matched += row.baseline_matched, truths += row.truths;
  EXPECT_DOUBLE_EQ(report.baseline, static_cast<double>(matched) / static_cast<double>(truths));
  for (const auto& level : report.levels) {
    std::size_t lm = 0, lt = 0;
    for (const auto& row : report.scenes) {
      if (row.degradation_level != level.degradation_level) continue;
      lm += row.baseline_matched;
      lt += row.truths;
    }
    EXPECT_EQ(level.truths, lt);
    EXPECT_DOUBLE_EQ(level.baseline, static_cast<double>(lm) / static_cast<double>(lt));
  }
  EvalConfig bad;
  bad.iou_thr = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST_F(CascadeTest, ReportFilesRoundTripAndAreDeterministic) {
  auto m = models();
  const auto cfg = quick(0.11);
  const auto a = run_comparison(*scenes_, m, cfg, {}, 3);
  const auto b = run_comparison(*scenes_, m, cfg, {}, 3);
  const fs::path da = fs::temp_directory_path() / "dcssd_test_report_a";
  const fs::path db = fs::temp_directory_path() / "dcssd_test_report_b";
  fs::remove_all(da);
  fs::remove_all(db);
  emit_report(a, da);
  emit_report(b, db);

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(da / "report.json"), slurp(db / "report.json"));
  const auto j = nlohmann::json::parse(slurp(da / "report.json"));
  EXPECT_EQ(j, a.to_json());
  EXPECT_EQ(j.at("scenes").size(), scenes_->size());
  EXPECT_DOUBLE_EQ(j.at("paper_reference").at("ssd_only").get<double>(), 0.355);
  EXPECT_DOUBLE_EQ(j.at("paper_reference").at("dcgan_ssd").get<double>(), 0.807);
  for (const char* key : {"baseline", "cascade", "baseline_precision", "cascade_precision"}) {
    const double v = j.at("aggregate").at(key).get<double>();
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }

  std::ifstream csv(da / "report.csv");
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, scenes_->size() + 1);

  const RgbImage plot = read_png(da / "detection_rate_by_level.png");
  EXPECT_GT(plot.width, 0u);
  EXPECT_GT(plot.height, 0u);
  EXPECT_FALSE(plot.pixels.empty());
}

}  // namespace
}  // namespace dcssd

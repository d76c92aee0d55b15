// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "dcssd/box.hpp"
#include "dcssd/cifar.hpp"
#include "dcssd/enhancer.hpp"
#include "dcssd/features.hpp"
#include "dcssd/nn.hpp"
#include "dcssd/random.hpp"
#include "dcssd/ssd.hpp"

namespace dcssd {
namespace {

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<float> a(n * n), b(n * n), c(n * n);
  Rng rng(1);
  fill_uniform(std::span<float>(a), rng, -1.0, 1.0);
  fill_uniform(std::span<float>(b), rng, -1.0, 1.0);
  for (auto _ : state) {
    nn::gemm<float>(false, false, n, n, n, 1.0f, a.data(), b.data(), 0.0f, c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(128)->Arg(512)->Arg(1024);

// 5x5 stride-2 convolution matching the discriminator's middle layer at batch 8.
void BM_Conv2dForward(benchmark::State& state) {
  nn::Conv2d<float> conv(256, 512, 5, 2, 2, false);
  Rng rng(2);
  conv.init_normal(rng, 0.02);
  TensorF x({8, 256, 16, 16});
  fill_normal(x.span(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dForward)->Unit(benchmark::kMillisecond);

std::vector<Detection> random_detections(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> pos(0.05, 0.95), side(0.02, 0.3), conf(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, 9);
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < n; ++i) dets.push_back({{pos(rng), pos(rng), side(rng), side(rng)}, cls(rng), conf(rng)});
  return dets;
}

void BM_Iou(benchmark::State& state) {
  const auto dets = random_detections(1024, 3);
  double acc = 0.0;
  for (auto _ : state) {
    for (std::size_t i = 0; i + 1 < dets.size(); ++i) acc += iou(dets[i].box, dets[i + 1].box);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * 1023);
}
BENCHMARK(BM_Iou);

void BM_Nms(benchmark::State& state) {
  const auto dets = random_detections(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(nms(dets, 0.45, 200));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Nms)->Arg(200)->Arg(1344)->Arg(5000);

void BM_MatchBoxes(benchmark::State& state) {
  DetectorNet net;
  std::vector<GtBox> truths;
  for (const auto& d : random_detections(4, 5)) truths.push_back({d.box, d.class_id});
  for (auto _ : state) benchmark::DoNotOptimize(match_boxes(truths, net.defaults().boxes));
}
BENCHMARK(BM_MatchBoxes);

// Full-size discriminator probe features (28672 values per chip).
void BM_ExtractFeatures(benchmark::State& state) {
  DiscriminatorNet d;
  d.initialize(6);
  const auto chips = records_to_chips(synthesize_cifar_like(static_cast<std::size_t>(state.range(0)), 7));
  for (auto _ : state) benchmark::DoNotOptimize(extract_features_batch(d, chips));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ExtractFeatures)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DetectorForward(benchmark::State& state) {
  DetectorNet net;
  net.initialize(8);
  ImageChip canvas(128, 128);
  Rng rng(9);
  fill_uniform(canvas.tensor().span(), rng, -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(detect(net, canvas, 0.5));
}
BENCHMARK(BM_DetectorForward)->Unit(benchmark::kMillisecond);

// One latent projection with the full-size generator; the cascade's per-candidate cost.
void BM_ProjectLatent(benchmark::State& state) {
  GeneratorNet g;
  g.initialize(10);
  ImageChip target(32, 32);
  Rng rng(11);
  fill_uniform(target.tensor().span(), rng, -1.0, 1.0);
  ProjectionConfig cfg;
  cfg.steps = static_cast<std::size_t>(state.range(0));
  cfg.restarts = 1;
  for (auto _ : state) benchmark::DoNotOptimize(project_latent(g, target, cfg));
}
BENCHMARK(BM_ProjectLatent)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace dcssd

BENCHMARK_MAIN();

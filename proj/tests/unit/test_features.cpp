// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dcssd/cifar.hpp"
#include "dcssd/features.hpp"
#include "dcssd/random.hpp"

namespace dcssd {
namespace {

TEST(Features, FullSizeDiscriminatorYields28672Values) {
  DiscriminatorNet d;
  d.initialize(1);
  const auto chips = records_to_chips(synthesize_cifar_like(2, 3));
  EXPECT_EQ(extract_features(d, chips[0]).size(), kFeatureDim);
  const TensorF batch = extract_features_batch(d, chips);
  EXPECT_EQ(batch.shape(), (Shape{2, kFeatureDim}));
}

TEST(Features, LastBlockIsTheRawActivationAndBatchMatchesSingle) {
  const auto arch = GanArchitecture::miniature(16);
  DiscriminatorNet d(arch);
  d.initialize(2);
  const auto chips = records_to_chips(synthesize_cifar_like(5, 4));
  const std::vector<float> f = extract_features(d, chips[3]);
  ASSERT_EQ(f.size(), feature_dim(arch));

  d.forward(stack_chips({chips[3]}), nn::Mode::Inference);
  const TensorF& last = d.block_activation(2);
  const std::size_t offset = f.size() - last.size();
  for (std::size_t i = 0; i < last.size(); ++i) EXPECT_EQ(f[offset + i], last[i]);

  const TensorF batch = extract_features_batch(d, chips, 2);
  // Batch size changes GEMM blocking, so agreement is to rounding only.
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(batch.slab(3)[i], f[i], 1e-5);
}

TEST(Features, FirstBlockMatchesWindowMaximum) {
  const auto arch = GanArchitecture::miniature(16);
  DiscriminatorNet d(arch);
  d.initialize(5);
  const auto chip = records_to_chips(synthesize_cifar_like(1, 6))[0];
  const std::vector<float> f = extract_features(d, chip);
  d.forward(stack_chips({chip}), nn::Mode::Inference);
  const TensorF& a = d.block_activation(0);  // (1, C, 16, 16)
  const std::size_t C = a.dim(1);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t gy = 0; gy < 4; ++gy)
      for (std::size_t gx = 0; gx < 4; ++gx) {
        float m = -INFINITY;
        for (std::size_t y = 4 * gy; y < 4 * gy + 4; ++y)
          for (std::size_t x = 4 * gx; x < 4 * gx + 4; ++x) m = std::max(m, a[(c * 16 + y) * 16 + x]);
        EXPECT_EQ(f[c * 16 + gy * 4 + gx], m);
      }
}

TEST(Features, WrongChipShapeIsRejected) {
  DiscriminatorNet d(GanArchitecture::miniature(16));
  d.initialize(1);
  EXPECT_THROW(extract_features(d, ImageChip(31, 32)), std::invalid_argument);
}

// Two Gaussian blobs separated along the first two coordinates, zero elsewhere.
struct Toy {
  TensorF x;
  std::vector<int> y;
};

Toy separable_toy(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Toy t{TensorF({n, dim}), {}};
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double sign = label == 0 ? -1.0 : 1.0;
    t.x[i * dim + 0] = static_cast<float>(2.0 * sign + noise(rng));
    t.x[i * dim + 1] = static_cast<float>(1.0 * sign + noise(rng));
    t.y.push_back(label);
  }
  return t;
}

LinearTrainConfig two_class(double lambda, std::uint64_t seed = 0) {
  LinearTrainConfig cfg;
  cfg.num_classes = 2;
  cfg.l2_lambda = lambda;
  cfg.seed = seed;
  return cfg;
}

double weight_norm(const LinearClassifier& c) {
  return std::sqrt(std::inner_product(c.weights.begin(), c.weights.end(), c.weights.begin(), 0.0));
}

TEST(TrainLinear, SeparableToyPaddedToProbeDimensionIsFitExactly) {
  const Toy toy = separable_toy(40, kFeatureDim, 3);
  const auto fit = train_linear(toy.x, toy.y, two_class(1e-3));
  for (std::size_t i = 0; i < toy.y.size(); ++i) {
    const auto p = fit.classifier.probabilities(toy.x.slab(i));
    const int brute = p[1] > p[0] ? 1 : 0;
    EXPECT_EQ(brute, toy.y[i]);
    EXPECT_EQ(classify_features(fit.classifier, toy.x.slab(i)).class_id, toy.y[i]);
  }
}

TEST(TrainLinear, LargerPenaltyGivesSmallerWeights) {
  const Toy toy = separable_toy(30, 64, 4);
  const auto strong = train_linear(toy.x, toy.y, two_class(1e3));
  const auto weak = train_linear(toy.x, toy.y, two_class(1e-3));
  EXPECT_LT(weight_norm(strong.classifier), weight_norm(weak.classifier));
}

TEST(TrainLinear, ObjectiveIsNonIncreasingAndSeedIndependent) {
  const Toy toy = separable_toy(30, 48, 5);
  // Overlapping blobs keep the optimum finite and well conditioned.
  TensorF x = toy.x;
  Rng rng(6);
  fill_normal(x.span(), rng, 0.0, 1.0);
  const auto a = train_linear(x, toy.y, two_class(1e-2, 1));
  const auto b = train_linear(x, toy.y, two_class(1e-2, 2));
  for (std::size_t i = 1; i < a.objective_trace.size(); ++i) {
    EXPECT_LE(a.objective_trace[i], a.objective_trace[i - 1]);
  }
  EXPECT_TRUE(a.converged);
  EXPECT_TRUE(b.converged);
  EXPECT_NEAR(a.objective_trace.back(), b.objective_trace.back(), 1e-6);
}

TEST(TrainLinear, PrimalAndGramRoutesAgree) {
  Rng rng(7);
  TensorF x({24, 60});
  fill_normal(x.span(), rng, 0.0, 1.0);
  std::vector<int> y;
  for (int i = 0; i < 24; ++i) y.push_back(i % 3);
  LinearTrainConfig cfg;
  cfg.num_classes = 3;
  cfg.l2_lambda = 5e-2;
  cfg.solver = LinearSolver::Primal;
  const auto p = train_linear(x, y, cfg);
  cfg.solver = LinearSolver::Gram;
  const auto g = train_linear(x, y, cfg);
  EXPECT_NEAR(p.objective_trace.back(), g.objective_trace.back(), 1e-6);
  for (std::size_t i = 0; i < p.classifier.weights.size(); ++i) {
    EXPECT_NEAR(p.classifier.weights[i], g.classifier.weights[i], 1e-3);
  }
}

TEST(TrainLinear, ProbabilitiesNormalizeAndShiftLeavesArgmax) {
  Rng rng(8);
  TensorF x({30, 20});
  fill_normal(x.span(), rng, 0.0, 1.0);
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) y.push_back(i % 10);
  LinearTrainConfig cfg;
  cfg.max_iterations = 50;
  LinearClassifier clf = train_linear(x, y, cfg).classifier;
  LinearClassifier shifted = clf;
  for (double& b : shifted.bias) b += 3.25;
  for (std::size_t i = 0; i < 30; ++i) {
    const auto p = clf.probabilities(x.slab(i));
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    const auto c = classify_features(clf, x.slab(i));
    const auto s = classify_features(shifted, x.slab(i));
    EXPECT_EQ(c.class_id, s.class_id);
    EXPECT_NEAR(c.confidence, s.confidence, 1e-12);
    EXPECT_GT(c.confidence, 0.0);
    EXPECT_LT(c.confidence, 1.0);
  }
}

TEST(TrainLinear, ConstantDimensionsAreAbsorbedByTheScalerFloor) {
  const Toy toy = separable_toy(20, 10, 9);
  const auto fit = train_linear(toy.x, toy.y, two_class(1e-2));
  for (std::size_t j = 2; j < 10; ++j) EXPECT_EQ(fit.classifier.feature_std[j], float(LinearClassifier::kStdFloor));
  for (double w : fit.classifier.weights) EXPECT_TRUE(std::isfinite(w));
}

TEST(TrainLinear, RejectsMissingClassesBadLabelsAndNonPositivePenalty) {
  const Toy toy = separable_toy(20, 8, 10);
  LinearTrainConfig cfg;  // 10 classes but only two present
  EXPECT_THROW(train_linear(toy.x, toy.y, cfg), std::invalid_argument);
  EXPECT_THROW(train_linear(toy.x, toy.y, two_class(0.0)), std::invalid_argument);
  auto bad = toy.y;
  bad[0] = 5;
  EXPECT_THROW(train_linear(toy.x, bad, two_class(1e-2)), std::invalid_argument);
  EXPECT_THROW(train_linear(toy.x, std::span(toy.y).first(5), two_class(1e-2)), std::invalid_argument);
}

TEST(TrainLinear, CheckpointRoundTripPreservesPredictions) {
  const Toy toy = separable_toy(20, 12, 11);
  const auto clf = train_linear(toy.x, toy.y, two_class(1e-2)).classifier;
  const auto back = load_classifier(classifier_checkpoint(clf, {}));
  EXPECT_EQ(back.num_classes, clf.num_classes);
  EXPECT_EQ(back.l2_lambda, clf.l2_lambda);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto a = clf.logits(toy.x.slab(i));
    const auto b = back.logits(toy.x.slab(i));
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-5);
  }
  EXPECT_THROW(classify_features(clf, std::vector<float>(7)), std::invalid_argument);
}

}  // namespace
}  // namespace dcssd

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dcssd/checkpoint.hpp"
#include "dcssd/gan.hpp"
#include "dcssd/image.hpp"

namespace dcssd {

inline constexpr std::size_t kPoolGrid = 4;
/// 16 * (256 + 512 + 1024)
inline constexpr std::size_t kFeatureDim = 28672;

/// Number of probe features a discriminator with this architecture yields.
std::size_t feature_dim(const GanArchitecture& arch);

/// Max-pools an (N, C, H, W) activation into a 4x4 grid of non-overlapping
/// (H/4 x W/4) windows and writes N rows of C*16 values, channel-major then
/// row-major cells, into out at column offset `column` of a row-stride `stride` matrix.
void max_pool_grid(const TensorF& activation, float* out, std::size_t stride, std::size_t column);

/// Concatenated pooled activations of the three discriminator blocks, in layer order.
std::vector<float> extract_features(DiscriminatorNet& d, const ImageChip& chip);
/// Batched extraction, (N, feature_dim) rows; chips are processed `chunk` at a time.
TensorF extract_features_batch(DiscriminatorNet& d, std::span<const ImageChip> chips,
                               std::size_t chunk = 128);

/// L2-regularized multinomial logistic regression on standardized features.
struct LinearClassifier {
  std::size_t num_classes = 10;
  std::size_t dim = 0;
  std::vector<double> weights;  // num_classes x dim, row-major
  std::vector<double> bias;
  std::vector<float> feature_mean;
  std::vector<float> feature_std;  // floored at kStdFloor
  double l2_lambda = 1e-3;

  static constexpr double kStdFloor = 1e-6;

  std::vector<double> logits(std::span<const float> features) const;
  /// Softmax over logits, computed in double.
  std::vector<double> probabilities(std::span<const float> features) const;
};

enum class LinearSolver { Auto, Primal, Gram };

struct LinearTrainConfig {
  double l2_lambda = 1e-3;
  std::uint64_t seed = 0;
  std::size_t max_iterations = 5000;
  double gradient_tolerance = 1e-4;
  std::size_t num_classes = 10;
  LinearSolver solver = LinearSolver::Auto;
};

struct LinearTrainResult {
  LinearClassifier classifier;
  std::vector<double> objective_trace;  // objective after every accepted step, [0] = initial
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

/// Fits by full-batch gradient descent (Barzilai-Borwein trial steps with Armijo
/// backtracking, so the objective never increases). `features` is (N, D) and is
/// standardized in place. The Gram route expresses the same iterates through the
/// N x N kernel matrix and is chosen automatically when N <= D.
LinearTrainResult train_linear(TensorF features, std::span<const int> labels,
                               const LinearTrainConfig& cfg);

struct Classification {
  int class_id = 0;
  double confidence = 0.0;
};

/// Argmax class (lowest index on ties) and its softmax probability.
Classification classify_features(const LinearClassifier& clf, std::span<const float> features);
Classification classify_chip(DiscriminatorNet& d, const LinearClassifier& clf,
                             const ImageChip& chip);

Checkpoint classifier_checkpoint(const LinearClassifier& clf, const nlohmann::json& metadata);
LinearClassifier load_classifier(const Checkpoint& ckpt);

}  // namespace dcssd

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcssd/gan.hpp"
#include "dcssd/image.hpp"

namespace dcssd {

struct ProjectionConfig {
  std::size_t steps = 200;
  double step_size = 0.05;
  std::size_t restarts = 3;
  double perceptual_weight = 0.0;
  std::uint64_t seed = 0;

  static constexpr int kMaxHalvings = 10;

  void validate() const;
  nlohmann::json to_json() const;
  static ProjectionConfig from_json(const nlohmann::json& j);
};

/// Upper bound on the reconstruction MSE of projecting an in-range target G(z) with the
/// default configuration, measured on the desk-scale generator.
inline constexpr double kReconstructionMseThreshold = 0.05;

struct EnhancementResult {
  ImageChip enhanced{kChipSide, kChipSide};
  std::vector<float> z_star;
  double initial_loss = 0.0;  // loss at the returned restart's starting point
  double final_loss = 0.0;
  std::vector<double> loss_trace;  // accepted losses of the returned restart
};

/// Gradient descent on z for L(z) = MSE(G(z), target) + w * MSE(phi(G(z)), phi(target)),
/// phi being the pooled discriminator probe. Each step moves step_size * sqrt(latent_dim)
/// along the normalized negative gradient and is accepted only if L does not increase;
/// otherwise the step is halved, up to 10 times, after which the step is a no-op.
/// `initial_latents` (k x latent_dim) replace the first k sampled starting points.
/// `d` is required only when perceptual_weight > 0.
EnhancementResult project_latent(GeneratorNet& g, const ImageChip& target,
                                 const ProjectionConfig& cfg, DiscriminatorNet* d = nullptr,
                                 const TensorF* initial_latents = nullptr);

/// Projects several targets in one batch; target i uses seed cfg.seed + i.
std::vector<EnhancementResult> project_latent_batch(GeneratorNet& g,
                                                    std::span<const ImageChip> targets,
                                                    const ProjectionConfig& cfg,
                                                    DiscriminatorNet* d = nullptr);

/// Resizes to 32x32 (bilinear) and projects; cfg.steps == 0 returns the resized chip.
ImageChip enhance_chip(GeneratorNet& g, const ImageChip& chip, const ProjectionConfig& cfg,
                       DiscriminatorNet* d = nullptr);

}  // namespace dcssd

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcssd/checkpoint.hpp"
#include "dcssd/cifar.hpp"
#include "dcssd/image.hpp"
#include "dcssd/nn.hpp"

namespace dcssd {

inline constexpr std::size_t kLatentDim = 100;
inline constexpr std::size_t kChipSide = 32;

/// Channel ladders of the DCGAN pair. The discriminator widths fix the probe
/// dimension: 16 * (256 + 512 + 1024) = 28672.
struct GanArchitecture {
  std::size_t latent_dim = kLatentDim;
  std::array<std::size_t, 3> generator_channels{1024, 512, 256};
  std::array<std::size_t, 3> discriminator_channels{256, 512, 1024};

  /// Every width divided by `divisor` (used for gradient checks and smoke tests).
  static GanArchitecture miniature(std::size_t divisor);
  nlohmann::json to_json() const;
  static GanArchitecture from_json(const nlohmann::json& j);

  friend bool operator==(const GanArchitecture&, const GanArchitecture&) = default;
};

/// z (N, latent) -> FC to 4x4xC0 -> BN/ReLU -> three 4x4 stride-2 fractionally-strided
/// convolutions (BN/ReLU on hidden layers) -> tanh, giving (N, 3, 32, 32).
template <typename T>
class Generator {
 public:
  explicit Generator(GanArchitecture arch = {});
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  void initialize(std::uint64_t seed);
  bool initialized() const { return initialized_; }

  Tensor<T> forward(const Tensor<T>& z, nn::Mode mode);
  /// Returns dL/dz for dL/d(output).
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads = true);

  nn::ParamList<T> params();
  const GanArchitecture& architecture() const { return arch_; }

 private:
  GanArchitecture arch_;
  bool initialized_ = false;
  nn::Linear<T> project_;
  nn::BatchNorm<T> bn0_, bn1_, bn2_;
  nn::ConvTranspose2d<T> up1_, up2_, up3_;
  nn::ActivationLayer<T> act0_{nn::Activation::ReLU}, act1_{nn::Activation::ReLU},
      act2_{nn::Activation::ReLU}, out_{nn::Activation::Tanh};
  std::size_t batch_ = 0;
};

/// x (N, 3, 32, 32) -> three 4x4 stride-2 convolutions with leaky-ReLU (BN on the
/// second and third) -> FC -> sigmoid. Activation maps 16x16xC0, 8x8xC1, 4x4xC2.
template <typename T>
class Discriminator {
 public:
  explicit Discriminator(GanArchitecture arch = {});
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;

  void initialize(std::uint64_t seed);
  bool initialized() const { return initialized_; }

  /// Returns (N, 1) probabilities.
  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode);
  /// Backpropagates dL/d(probability); returns dL/dx.
  Tensor<T> backward(const Tensor<T>& grad_prob, bool param_grads = true);
  /// Backpropagates dL/d(logit), bypassing the output sigmoid.
  Tensor<T> backward_logit(const Tensor<T>& grad_logit, bool param_grads = true);
  /// Backpropagates gradients injected at the three block activations (an empty
  /// tensor means zero) instead of through the head; returns dL/dx.
  Tensor<T> backward_blocks(const std::array<Tensor<T>, 3>& grads, bool param_grads = true);

  /// Post-nonlinearity activation of conv block k (0..2) from the last forward.
  const Tensor<T>& block_activation(std::size_t k) const;

  nn::ParamList<T> params();
  const GanArchitecture& architecture() const { return arch_; }

 private:
  GanArchitecture arch_;
  bool initialized_ = false;
  nn::Conv2d<T> conv1_, conv2_, conv3_;
  nn::BatchNorm<T> bn2_, bn3_;
  nn::ActivationLayer<T> act1_{nn::Activation::LeakyReLU, T(0.2)},
      act2_{nn::Activation::LeakyReLU, T(0.2)}, act3_{nn::Activation::LeakyReLU, T(0.2)},
      sigmoid_{nn::Activation::Sigmoid};
  nn::Linear<T> head_;
  Shape flat_shape_;
};

using GeneratorNet = Generator<float>;
using DiscriminatorNet = Discriminator<float>;

/// n x latent_dim i.i.d. standard normal entries, deterministic in seed.
TensorF sample_latent(std::size_t n, std::uint64_t seed, std::size_t latent_dim = kLatentDim);

/// Inference-mode generation.
std::vector<ImageChip> generate(GeneratorNet& g, const TensorF& z);
/// Inference-mode scoring of 3x32x32 chips.
std::vector<float> discriminate(DiscriminatorNet& d, const std::vector<ImageChip>& chips);

inline constexpr double kProbabilityClip = 1e-7;

template <typename T>
struct GanLosses {
  T d_loss{};
  T g_loss{};
  std::vector<T> d_loss_grad_real;  // dd_loss / dd_real[i]
  std::vector<T> d_loss_grad_fake;  // dd_loss / dd_fake[i]
  std::vector<T> g_loss_grad_fake;  // dg_loss / dd_fake[i]
};

/// Non-saturating GAN objective on clipped probabilities:
/// d_loss = -mean(log d_real) - mean(log(1 - d_fake)), g_loss = -mean(log d_fake).
template <typename T>
GanLosses<T> gan_losses(std::span<const T> d_real, std::span<const T> d_fake);

struct GanTrainConfig {
  std::size_t batch_size = 72;
  std::size_t epochs = 25;
  nn::AdamConfig adam{2e-4, 0.5, 0.999, 1e-8};
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // iterations; 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;
  GanArchitecture architecture;

  void validate() const;
  nlohmann::json to_json() const;
};

struct GanLogRow {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double mean_d_real = 0.0;
  double mean_d_fake = 0.0;
  double wall_ms = 0.0;
};

struct GanTrainResult {
  GeneratorNet generator;
  DiscriminatorNet discriminator;
  std::vector<GanLogRow> log;
};

using GanProgress = std::function<void(const GanLogRow&)>;

/// Alternates one discriminator step (real + fake batch) and one generator step per
/// iteration over seeded shuffled full batches; the partial last batch is dropped.
GanTrainResult train_gan(std::span<const CifarRecord> records, const GanTrainConfig& cfg,
                         const GanProgress& progress = {});

void write_gan_log_csv(const std::filesystem::path& path, std::span<const GanLogRow> rows);

Checkpoint gan_checkpoint(GeneratorNet& g, DiscriminatorNet& d, const nlohmann::json& metadata);
/// Restores both nets (architecture from metadata) from a checkpoint.
std::pair<GeneratorNet, DiscriminatorNet> load_gan(const Checkpoint& ckpt);

}  // namespace dcssd

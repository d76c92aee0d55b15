// SPDX-License-Identifier: Apache-2.0
#include "dcssd/gan.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dcssd/errors.hpp"
#include "dcssd/random.hpp"

namespace dcssd {

GanArchitecture GanArchitecture::miniature(std::size_t divisor) {
  GanArchitecture a;
  for (auto& c : a.generator_channels) c = std::max<std::size_t>(1, c / divisor);
  for (auto& c : a.discriminator_channels) c = std::max<std::size_t>(1, c / divisor);
  return a;
}

nlohmann::json GanArchitecture::to_json() const {
  return {{"latent_dim", latent_dim},
          {"generator_channels", generator_channels},
          {"discriminator_channels", discriminator_channels}};
}

GanArchitecture GanArchitecture::from_json(const nlohmann::json& j) {
  GanArchitecture a;
  a.latent_dim = j.at("latent_dim").get<std::size_t>();
  a.generator_channels = j.at("generator_channels").get<std::array<std::size_t, 3>>();
  a.discriminator_channels = j.at("discriminator_channels").get<std::array<std::size_t, 3>>();
  return a;
}

// ------------------------------------------------------------- Generator

template <typename T>
Generator<T>::Generator(GanArchitecture arch) : arch_(arch) {
  const auto& c = arch_.generator_channels;
  project_ = nn::Linear<T>(arch_.latent_dim, c[0] * 16, false);
  bn0_ = nn::BatchNorm<T>(c[0]);
  up1_ = nn::ConvTranspose2d<T>(c[0], c[1], 4, 2, 1, false);
  bn1_ = nn::BatchNorm<T>(c[1]);
  up2_ = nn::ConvTranspose2d<T>(c[1], c[2], 4, 2, 1, false);
  bn2_ = nn::BatchNorm<T>(c[2]);
  up3_ = nn::ConvTranspose2d<T>(c[2], 3, 4, 2, 1, true);
}

template <typename T>
void Generator<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  project_.init_normal(rng, 0.02);
  bn0_.init_normal(rng, 0.02);
  up1_.init_normal(rng, 0.02);
  bn1_.init_normal(rng, 0.02);
  up2_.init_normal(rng, 0.02);
  bn2_.init_normal(rng, 0.02);
  up3_.init_normal(rng, 0.02);
  initialized_ = true;
}

template <typename T>
Tensor<T> Generator<T>::forward(const Tensor<T>& z, nn::Mode mode) {
  if (!initialized_) throw std::logic_error("Generator: parameters are not initialized");
  if (z.rank() != 2 || z.dim(1) != arch_.latent_dim) {
    throw std::invalid_argument("Generator: expected (N," + std::to_string(arch_.latent_dim) +
                                ") latent batch, got " + shape_string(z.shape()));
  }
  batch_ = z.dim(0);
  Tensor<T> h = project_.forward(z);
  h.reshape({batch_, arch_.generator_channels[0], 4, 4});
  h = act0_.forward(bn0_.forward(h, mode));
  h = act1_.forward(bn1_.forward(up1_.forward(h), mode));
  h = act2_.forward(bn2_.forward(up2_.forward(h), mode));
  return out_.forward(up3_.forward(h));
}

template <typename T>
Tensor<T> Generator<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
  Tensor<T> g = up3_.backward(out_.backward(grad_out), param_grads);
  g = up2_.backward(bn2_.backward(act2_.backward(g), param_grads), param_grads);
  g = up1_.backward(bn1_.backward(act1_.backward(g), param_grads), param_grads);
  g = bn0_.backward(act0_.backward(g), param_grads);
  g.reshape({batch_, arch_.generator_channels[0] * 16});
  return project_.backward(g, param_grads);
}

template <typename T>
nn::ParamList<T> Generator<T>::params() {
  nn::ParamList<T> p;
  project_.append_params(p, "g.project");
  bn0_.append_params(p, "g.bn0");
  up1_.append_params(p, "g.up1");
  bn1_.append_params(p, "g.bn1");
  up2_.append_params(p, "g.up2");
  bn2_.append_params(p, "g.bn2");
  up3_.append_params(p, "g.up3");
  return p;
}

// --------------------------------------------------------- Discriminator

template <typename T>
Discriminator<T>::Discriminator(GanArchitecture arch) : arch_(arch) {
  const auto& c = arch_.discriminator_channels;
  conv1_ = nn::Conv2d<T>(3, c[0], 4, 2, 1, true);
  conv2_ = nn::Conv2d<T>(c[0], c[1], 4, 2, 1, false);
  bn2_ = nn::BatchNorm<T>(c[1]);
  conv3_ = nn::Conv2d<T>(c[1], c[2], 4, 2, 1, false);
  bn3_ = nn::BatchNorm<T>(c[2]);
  head_ = nn::Linear<T>(c[2] * 16, 1, true);
}

template <typename T>
void Discriminator<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  conv1_.init_normal(rng, 0.02);
  conv2_.init_normal(rng, 0.02);
  bn2_.init_normal(rng, 0.02);
  conv3_.init_normal(rng, 0.02);
  bn3_.init_normal(rng, 0.02);
  head_.init_normal(rng, 0.02);
  initialized_ = true;
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& x, nn::Mode mode) {
  if (!initialized_) throw std::logic_error("Discriminator: parameters are not initialized");
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != kChipSide || x.dim(3) != kChipSide) {
    throw std::invalid_argument("Discriminator: expected (N,3,32,32) input, got " +
                                shape_string(x.shape()));
  }
  Tensor<T> h = act1_.forward(conv1_.forward(x));
  h = act2_.forward(bn2_.forward(conv2_.forward(h), mode));
  h = act3_.forward(bn3_.forward(conv3_.forward(h), mode));
  flat_shape_ = h.shape();
  h.reshape({x.dim(0), h.size() / x.dim(0)});
  return sigmoid_.forward(head_.forward(h));
}

template <typename T>
Tensor<T> Discriminator<T>::backward(const Tensor<T>& grad_prob, bool param_grads) {
  return backward_logit(sigmoid_.backward(grad_prob), param_grads);
}

template <typename T>
Tensor<T> Discriminator<T>::backward_logit(const Tensor<T>& grad_logit, bool param_grads) {
  Tensor<T> g = head_.backward(grad_logit, param_grads);
  g.reshape(flat_shape_);
  g = conv3_.backward(bn3_.backward(act3_.backward(g), param_grads), param_grads);
  g = conv2_.backward(bn2_.backward(act2_.backward(g), param_grads), param_grads);
  return conv1_.backward(act1_.backward(g), param_grads);
}

template <typename T>
Tensor<T> Discriminator<T>::backward_blocks(const std::array<Tensor<T>, 3>& grads,
                                            bool param_grads) {
  auto inject = [&](Tensor<T> g, std::size_t k) {
    if (grads[k].empty()) return g;
    if (g.empty()) return grads[k];
    if (g.shape() != grads[k].shape()) {
      throw std::invalid_argument("Discriminator::backward_blocks: gradient shape mismatch");
    }
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += grads[k][i];
    return g;
  };
  Tensor<T> g = inject(Tensor<T>(act3_.output().shape()), 2);
  g = conv3_.backward(bn3_.backward(act3_.backward(g), param_grads), param_grads);
  g = inject(std::move(g), 1);
  g = conv2_.backward(bn2_.backward(act2_.backward(g), param_grads), param_grads);
  g = inject(std::move(g), 0);
  return conv1_.backward(act1_.backward(g), param_grads);
}

template <typename T>
const Tensor<T>& Discriminator<T>::block_activation(std::size_t k) const {
  switch (k) {
    case 0: return act1_.output();
    case 1: return act2_.output();
    case 2: return act3_.output();
    default: throw std::out_of_range("Discriminator::block_activation: block index > 2");
  }
}

template <typename T>
nn::ParamList<T> Discriminator<T>::params() {
  nn::ParamList<T> p;
  conv1_.append_params(p, "d.conv1");
  conv2_.append_params(p, "d.conv2");
  bn2_.append_params(p, "d.bn2");
  conv3_.append_params(p, "d.conv3");
  bn3_.append_params(p, "d.bn3");
  head_.append_params(p, "d.head");
  return p;
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;

// ------------------------------------------------------------ operations

TensorF sample_latent(std::size_t n, std::uint64_t seed, std::size_t latent_dim) {
  TensorF z({n, latent_dim});
  Rng rng(seed);
  fill_normal(z.span(), rng);
  return z;
}

std::vector<ImageChip> generate(GeneratorNet& g, const TensorF& z) {
  if (z.dim(0) == 0) return {};
  const TensorF out = g.forward(z, nn::Mode::Inference);
  std::vector<ImageChip> chips;
  chips.reserve(out.dim(0));
  for (std::size_t i = 0; i < out.dim(0); ++i) chips.push_back(chip_from_batch(out, i));
  return chips;
}

std::vector<float> discriminate(DiscriminatorNet& d, const std::vector<ImageChip>& chips) {
  if (chips.empty()) return {};
  const TensorF p = d.forward(stack_chips(chips), nn::Mode::Inference);
  return {p.begin(), p.end()};
}

template <typename T>
GanLosses<T> gan_losses(std::span<const T> d_real, std::span<const T> d_fake) {
  if (d_real.empty() || d_fake.empty()) throw std::invalid_argument("gan_losses: empty batch");
  const T eps = static_cast<T>(kProbabilityClip);
  const T hi = T{1} - eps;
  GanLosses<T> out;
  out.d_loss_grad_real.resize(d_real.size());
  out.d_loss_grad_fake.resize(d_fake.size());
  out.g_loss_grad_fake.resize(d_fake.size());
  const T nr = static_cast<T>(d_real.size()), nf = static_cast<T>(d_fake.size());
  T real_term{}, fake_term{}, gen_term{};
  for (std::size_t i = 0; i < d_real.size(); ++i) {
    const T p = std::clamp(d_real[i], eps, hi);
    real_term -= std::log(p);
    out.d_loss_grad_real[i] = (d_real[i] > eps && d_real[i] < hi) ? -T{1} / (p * nr) : T{};
  }
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    const T p = std::clamp(d_fake[i], eps, hi);
    const bool interior = d_fake[i] > eps && d_fake[i] < hi;
    fake_term -= std::log(T{1} - p);
    gen_term -= std::log(p);
    out.d_loss_grad_fake[i] = interior ? T{1} / ((T{1} - p) * nf) : T{};
    out.g_loss_grad_fake[i] = interior ? -T{1} / (p * nf) : T{};
  }
  out.d_loss = real_term / nr + fake_term / nf;
  out.g_loss = gen_term / nf;
  return out;
}

template GanLosses<float> gan_losses<float>(std::span<const float>, std::span<const float>);
template GanLosses<double> gan_losses<double>(std::span<const double>, std::span<const double>);

// -------------------------------------------------------------- training

void GanTrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("GanTrainConfig: batch_size must be >= 2");
  if (epochs < 1) throw std::invalid_argument("GanTrainConfig: epochs must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("GanTrainConfig: bad learning rate");
}

nlohmann::json GanTrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"epochs", epochs},
          {"learning_rate", adam.learning_rate},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"architecture", architecture.to_json()}};
}

Checkpoint gan_checkpoint(GeneratorNet& g, DiscriminatorNet& d, const nlohmann::json& metadata) {
  Checkpoint ckpt;
  ckpt.metadata = metadata;
  ckpt.metadata["kind"] = "gan";
  ckpt.metadata["architecture"] = g.architecture().to_json();
  ckpt.add_params(g.params());
  ckpt.add_params(d.params());
  return ckpt;
}

std::pair<GeneratorNet, DiscriminatorNet> load_gan(const Checkpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "gan") throw DataError("checkpoint does not hold a GAN");
  const auto arch = GanArchitecture::from_json(ckpt.metadata.at("architecture"));
  GeneratorNet g(arch);
  DiscriminatorNet d(arch);
  g.initialize(0);
  d.initialize(0);
  ckpt.restore_params(g.params());
  ckpt.restore_params(d.params());
  return {std::move(g), std::move(d)};
}

namespace {

void require_finite(double v, const char* what, std::size_t iteration) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string("non-finite ") + what + " at GAN iteration " +
                         std::to_string(iteration));
  }
}

double mean_of(const TensorF& t) {
  return std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
}

}  // namespace

namespace {

// d/dl of the batch-mean cross-entropy toward `target` for sigmoid outputs p.
TensorF logit_gradient(const TensorF& p, float target) {
  TensorF g(p.shape());
  const float inv_n = 1.0f / static_cast<float>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = (p[i] - target) * inv_n;
  return g;
}

}  // namespace

GanTrainResult train_gan(std::span<const CifarRecord> records, const GanTrainConfig& cfg,
                         const GanProgress& progress) {
  cfg.validate();
  if (records.size() < cfg.batch_size) {
    throw DataError("train_gan: " + std::to_string(records.size()) +
                    " records are fewer than one batch of " + std::to_string(cfg.batch_size));
  }
  GeneratorNet g(cfg.architecture);
  DiscriminatorNet d(cfg.architecture);
  g.initialize(derive_seed(cfg.seed, 1));
  d.initialize(derive_seed(cfg.seed, 2));
  auto g_params = g.params();
  auto d_params = d.params();
  nn::Adam<float> g_opt(g_params, cfg.adam);
  nn::Adam<float> d_opt(d_params, cfg.adam);

  const std::size_t per_epoch = records.size() / cfg.batch_size;
  const std::size_t chip_floats = kCifarPixelBytes;
  std::vector<std::size_t> order(records.size());
  Rng latent_rng(derive_seed(cfg.seed, 3));

  std::vector<GanLogRow> log;
  log.reserve(per_epoch * cfg.epochs);
  std::size_t iteration = 0;
  const auto start = std::chrono::steady_clock::now();

  auto save_periodic = [&](const std::string& stem) {
    if (cfg.checkpoint_dir.empty()) return;
    nlohmann::json meta{{"config", cfg.to_json()}, {"iteration", iteration}};
    Checkpoint ckpt = gan_checkpoint(g, d, meta);
    ckpt.metadata["optimizer"] = {{"generator_steps", g_opt.steps()},
                                  {"discriminator_steps", d_opt.steps()}};
    ckpt.add_params(g_opt.state(), "g_opt.");
    ckpt.add_params(d_opt.state(), "d_opt.");
    save_checkpoint(cfg.checkpoint_dir / (stem + ".ckpt"), ckpt);
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t b = 0; b < per_epoch; ++b) {
      TensorF real({cfg.batch_size, 3, kChipSide, kChipSide});
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const ImageChip chip = record_to_chip(records[order[b * cfg.batch_size + i]]);
        std::copy_n(chip.data(), chip_floats, real.data() + i * chip_floats);
      }
      TensorF z({cfg.batch_size, cfg.architecture.latent_dim});
      fill_normal(z.span(), latent_rng);

      const TensorF fake = g.forward(z, nn::Mode::Train);

      // Discriminator step: real and fake batches normalized separately. Gradients are
      // taken in logit space (sigma(l) - y), the exact derivative of the loss away from
      // the probability clip, so a saturated discriminator still passes signal.
      d_opt.zero_grad();
      const TensorF p_real = d.forward(real, nn::Mode::Train);
      d.backward_logit(logit_gradient(p_real, 1.0f));
      const TensorF p_fake = d.forward(fake, nn::Mode::Train);
      d.backward_logit(logit_gradient(p_fake, 0.0f));
      d_opt.step();
      const auto losses = gan_losses<float>(p_real.span(), p_fake.span());

      // Generator step through the updated discriminator (non-saturating target 1).
      g_opt.zero_grad();
      const TensorF p_gen = d.forward(fake, nn::Mode::Train);
      const auto gen_losses = gan_losses<float>(p_real.span(), p_gen.span());
      g.backward(d.backward_logit(logit_gradient(p_gen, 1.0f), false));
      g_opt.step();

      ++iteration;
      GanLogRow row;
      row.iteration = iteration;
      row.epoch = epoch;
      row.d_loss = losses.d_loss;
      row.g_loss = gen_losses.g_loss;
      row.mean_d_real = mean_of(p_real);
      row.mean_d_fake = mean_of(p_fake);
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                        .count();
      require_finite(row.d_loss, "discriminator loss", iteration);
      require_finite(row.g_loss, "generator loss", iteration);
      log.push_back(row);
      if (progress) progress(row);
      if (cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "gan_iter_%06zu", iteration);
        save_periodic(stem);
      }
    }
  }
  save_periodic("gan_final");
  return {std::move(g), std::move(d), std::move(log)};
}

void write_gan_log_csv(const std::filesystem::path& path, std::span<const GanLogRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write training log: " + path.string());
  out << "iteration,epoch,d_loss,g_loss,mean_d_real,mean_d_fake,wall_ms\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.3f\n", r.iteration, r.epoch,
                  r.d_loss, r.g_loss, r.mean_d_real, r.mean_d_fake, r.wall_ms);
    out << buf;
  }
}

}  // namespace dcssd

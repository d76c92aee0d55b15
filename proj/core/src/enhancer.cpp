// SPDX-License-Identifier: Apache-2.0
#include "dcssd/enhancer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dcssd/errors.hpp"
#include "dcssd/features.hpp"

namespace dcssd {

void ProjectionConfig::validate() const {
  if (restarts < 1) throw std::invalid_argument("ProjectionConfig: restarts must be >= 1");
  if (!(step_size > 0.0)) throw std::invalid_argument("ProjectionConfig: step_size must be > 0");
  if (!(perceptual_weight >= 0.0)) {
    throw std::invalid_argument("ProjectionConfig: perceptual_weight must be >= 0");
  }
}

nlohmann::json ProjectionConfig::to_json() const {
  return {{"steps", steps},
          {"step_size", step_size},
          {"restarts", restarts},
          {"perceptual_weight", perceptual_weight},
          {"seed", seed}};
}

ProjectionConfig ProjectionConfig::from_json(const nlohmann::json& j) {
  ProjectionConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "steps") c.steps = value.get<std::size_t>();
    else if (key == "step_size") c.step_size = value.get<double>();
    else if (key == "restarts") c.restarts = value.get<std::size_t>();
    else if (key == "perceptual_weight") c.perceptual_weight = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("ProjectionConfig: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

namespace {

// Pooled probe features plus, per feature, the flat index of the winning activation.
struct PooledBlocks {
  std::vector<float> values;             // (rows, dim)
  std::vector<std::size_t> argmax;       // index into the block activation tensor
  std::vector<std::size_t> block_of;     // block of each feature column
};

PooledBlocks pool_with_argmax(const DiscriminatorNet& d, std::size_t rows) {
  std::size_t dim = 0;
  for (std::size_t k = 0; k < 3; ++k) dim += d.block_activation(k).dim(1) * kPoolGrid * kPoolGrid;
  PooledBlocks out{std::vector<float>(rows * dim), std::vector<std::size_t>(rows * dim),
                   std::vector<std::size_t>(dim)};
  std::size_t column = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const TensorF& a = d.block_activation(k);
    const std::size_t c = a.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t ph = h / kPoolGrid, pw = w / kPoolGrid;
    for (std::size_t b = 0; b < rows; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t plane = (b * c + ch) * h * w;
        for (std::size_t i = 0; i < kPoolGrid; ++i) {
          for (std::size_t j = 0; j < kPoolGrid; ++j) {
            std::size_t best = plane + i * ph * w + j * pw;
            for (std::size_t y = i * ph; y < (i + 1) * ph; ++y)
              for (std::size_t x = j * pw; x < (j + 1) * pw; ++x)
                if (a[plane + y * w + x] > a[best]) best = plane + y * w + x;
            const std::size_t col = column + (ch * kPoolGrid + i) * kPoolGrid + j;
            out.values[b * dim + col] = a[best];
            out.argmax[b * dim + col] = best;
            out.block_of[col] = k;
          }
        }
      }
    }
    column += c * kPoolGrid * kPoolGrid;
  }
  return out;
}

// Evaluates the projection objective for a batch of latents, each row tied to one target.
class Objective {
 public:
  Objective(GeneratorNet& g, DiscriminatorNet* d, std::vector<TensorF> targets, double weight)
      : g_(g), d_(d), targets_(std::move(targets)), weight_(weight) {
    if (weight_ > 0.0) {
      for (const TensorF& t : targets_) {
        TensorF batch(t);
        batch.reshape({1, ImageChip::kChannels, kChipSide, kChipSide});
        d_->forward(batch, nn::Mode::Inference);
        target_features_.push_back(pool_with_argmax(*d_, 1).values);
      }
    }
  }

  /// Loss per row; rows[i] names the target of latent row i. Leaves forward caches set.
  std::vector<double> evaluate(const TensorF& z, std::span<const std::size_t> rows) {
    images_ = g_.forward(z, nn::Mode::Inference);
    const std::size_t px = ImageChip::kChannels * kChipSide * kChipSide;
    std::vector<double> loss(rows.size(), 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const float* x = images_.data() + r * px;
      const float* t = targets_[rows[r]].data();
      double acc = 0.0;
      for (std::size_t i = 0; i < px; ++i) acc += (double(x[i]) - t[i]) * (double(x[i]) - t[i]);
      loss[r] = acc / static_cast<double>(px);
    }
    if (weight_ > 0.0) {
      d_->forward(images_, nn::Mode::Inference);
      pooled_ = pool_with_argmax(*d_, rows.size());
      const std::size_t dim = pooled_.block_of.size();
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& tf = target_features_[rows[r]];
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
          const double diff = double(pooled_.values[r * dim + i]) - tf[i];
          acc += diff * diff;
        }
        loss[r] += weight_ * acc / static_cast<double>(dim);
      }
    }
    for (double l : loss) {
      if (!std::isfinite(l)) throw NumericalError("project_latent: non-finite loss");
    }
    return loss;
  }

  /// dL/dz for the rows of the last evaluate() call.
  TensorF gradient(std::span<const std::size_t> rows) {
    const std::size_t px = ImageChip::kChannels * kChipSide * kChipSide;
    TensorF gx(images_.shape());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const float* t = targets_[rows[r]].data();
      for (std::size_t i = 0; i < px; ++i) {
        gx[r * px + i] = static_cast<float>(2.0 * (images_[r * px + i] - t[i]) / double(px));
      }
    }
    if (weight_ > 0.0) {
      std::array<TensorF, 3> block_grads;
      for (std::size_t k = 0; k < 3; ++k) block_grads[k] = TensorF(d_->block_activation(k).shape());
      const std::size_t dim = pooled_.block_of.size();
      const double scale = 2.0 * weight_ / static_cast<double>(dim);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& tf = target_features_[rows[r]];
        for (std::size_t i = 0; i < dim; ++i) {
          const double diff = double(pooled_.values[r * dim + i]) - tf[i];
          block_grads[pooled_.block_of[i]][pooled_.argmax[r * dim + i]] +=
              static_cast<float>(scale * diff);
        }
      }
      const TensorF gd = d_->backward_blocks(block_grads, false);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gd[i];
    }
    return g_.backward(gx, false);
  }

  const TensorF& images() const { return images_; }

 private:
  GeneratorNet& g_;
  DiscriminatorNet* d_;
  std::vector<TensorF> targets_;
  double weight_;
  std::vector<std::vector<float>> target_features_;
  TensorF images_;
  PooledBlocks pooled_;
};

TensorF gather_rows(const TensorF& z, std::span<const std::size_t> idx) {
  const std::size_t dim = z.dim(1);
  TensorF out({idx.size(), dim});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(z.data() + idx[i] * dim, dim, out.data() + i * dim);
  }
  return out;
}

ImageChip chip_in_range(const TensorF& images, std::size_t row) {
  ImageChip chip = chip_from_batch(images, row);
  // tanh saturates to exactly +-1 in float; keep the output strictly inside (-1, 1).
  constexpr float kEdge = 1.0f - 1e-6f;
  for (auto& v : chip.tensor()) v = std::clamp(v, -kEdge, kEdge);
  return chip;
}

std::vector<EnhancementResult> run_projection(GeneratorNet& g, std::span<const ImageChip> targets,
                                              const ProjectionConfig& cfg, DiscriminatorNet* d,
                                              const TensorF* initial_latents) {
  cfg.validate();
  if (!g.initialized()) throw std::invalid_argument("project_latent: generator is untrained");
  if (cfg.perceptual_weight > 0.0 && (d == nullptr || !d->initialized())) {
    throw std::invalid_argument("project_latent: perceptual term needs a trained discriminator");
  }
  const std::size_t latent = g.architecture().latent_dim;
  std::vector<TensorF> target_tensors;
  for (const ImageChip& t : targets) {
    if (t.height() != kChipSide || t.width() != kChipSide) {
      throw std::invalid_argument("project_latent: target must be 3x32x32");
    }
    target_tensors.push_back(t.tensor());
  }
  if (initial_latents != nullptr &&
      (initial_latents->rank() != 2 || initial_latents->dim(1) != latent)) {
    throw std::invalid_argument("project_latent: initial latents must be (k, latent_dim)");
  }

  // Row r of the working batch is restart (r % restarts) of target (r / restarts).
  const std::size_t n_targets = targets.size(), restarts = cfg.restarts;
  const std::size_t rows_total = n_targets * restarts;
  TensorF z({rows_total, latent});
  std::vector<std::size_t> row_target(rows_total);
  for (std::size_t t = 0; t < n_targets; ++t) {
    const TensorF z0 = sample_latent(restarts, cfg.seed + t, latent);
    std::copy(z0.begin(), z0.end(), z.data() + t * restarts * latent);
    if (initial_latents != nullptr) {
      const std::size_t k = std::min(restarts, initial_latents->dim(0));
      std::copy_n(initial_latents->data(), k * latent, z.data() + t * restarts * latent);
    }
    for (std::size_t r = 0; r < restarts; ++r) row_target[t * restarts + r] = t;
  }

  Objective obj(g, d, std::move(target_tensors), cfg.perceptual_weight);
  std::vector<double> loss = obj.evaluate(z, row_target);
  std::vector<std::vector<double>> traces(rows_total);
  for (std::size_t r = 0; r < rows_total; ++r) traces[r].push_back(loss[r]);
  const std::vector<double> initial = loss;
  const double stride = cfg.step_size * std::sqrt(static_cast<double>(latent));
  std::vector<std::size_t> all(rows_total);
  for (std::size_t r = 0; r < rows_total; ++r) all[r] = r;
  bool caches_current = true;  // the last forward ran on exactly `z`

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (!caches_current) obj.evaluate(z, row_target);
    const TensorF grad = obj.gradient(row_target);
    std::vector<double> scale(rows_total, stride);
    std::vector<double> inv_norm(rows_total, 0.0);
    std::vector<std::size_t> pending;
    for (std::size_t r = 0; r < rows_total; ++r) {
      double sq = 0.0;
      for (std::size_t i = 0; i < latent; ++i) sq += double(grad[r * latent + i]) * grad[r * latent + i];
      if (sq > 0.0 && std::isfinite(sq)) {
        inv_norm[r] = 1.0 / std::sqrt(sq);
        pending.push_back(r);
      }
    }
    caches_current = false;
    for (int halving = 0; halving <= ProjectionConfig::kMaxHalvings && !pending.empty(); ++halving) {
      TensorF trial = gather_rows(z, pending);
      std::vector<std::size_t> trial_targets(pending.size());
      for (std::size_t i = 0; i < pending.size(); ++i) {
        const std::size_t r = pending[i];
        trial_targets[i] = row_target[r];
        const double s = scale[r] * inv_norm[r];
        for (std::size_t k = 0; k < latent; ++k) {
          trial[i * latent + k] = static_cast<float>(trial[i * latent + k] - s * grad[r * latent + k]);
        }
      }
      const std::vector<double> trial_loss = obj.evaluate(trial, trial_targets);
      std::vector<std::size_t> rejected;
      for (std::size_t i = 0; i < pending.size(); ++i) {
        const std::size_t r = pending[i];
        if (trial_loss[i] <= loss[r]) {
          std::copy_n(trial.data() + i * latent, latent, z.data() + r * latent);
          loss[r] = trial_loss[i];
        } else {
          scale[r] *= 0.5;
          rejected.push_back(r);
        }
      }
      caches_current = halving == 0 && rejected.empty() && pending.size() == rows_total;
      pending = std::move(rejected);
    }
    for (std::size_t r = 0; r < rows_total; ++r) traces[r].push_back(loss[r]);
  }

  if (!caches_current) obj.evaluate(z, row_target);
  std::vector<EnhancementResult> results(n_targets);
  for (std::size_t t = 0; t < n_targets; ++t) {
    std::size_t best = t * restarts;
    for (std::size_t r = best + 1; r < (t + 1) * restarts; ++r) {
      if (loss[r] < loss[best]) best = r;
    }
    EnhancementResult& res = results[t];
    res.enhanced = chip_in_range(obj.images(), best);
    res.z_star.assign(z.data() + best * latent, z.data() + (best + 1) * latent);
    res.initial_loss = initial[best];
    res.final_loss = loss[best];
    res.loss_trace = std::move(traces[best]);
  }
  return results;
}

}  // namespace

EnhancementResult project_latent(GeneratorNet& g, const ImageChip& target,
                                 const ProjectionConfig& cfg, DiscriminatorNet* d,
                                 const TensorF* initial_latents) {
  return std::move(
      run_projection(g, std::span<const ImageChip>(&target, 1), cfg, d, initial_latents).front());
}

std::vector<EnhancementResult> project_latent_batch(GeneratorNet& g,
                                                    std::span<const ImageChip> targets,
                                                    const ProjectionConfig& cfg,
                                                    DiscriminatorNet* d) {
  if (targets.empty()) return {};
  return run_projection(g, targets, cfg, d, nullptr);
}

ImageChip enhance_chip(GeneratorNet& g, const ImageChip& chip, const ProjectionConfig& cfg,
                       DiscriminatorNet* d) {
  ImageChip resized = resize_bilinear(chip, kChipSide, kChipSide);
  if (cfg.steps == 0) return resized;
  return project_latent(g, resized, cfg, d).enhanced;
}

}  // namespace dcssd

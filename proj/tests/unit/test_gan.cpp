// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "dcssd/checkpoint.hpp"
#include "dcssd/errors.hpp"
#include "dcssd/cifar.hpp"
#include "dcssd/features.hpp"
#include "dcssd/gan.hpp"

namespace dcssd {
namespace {

TEST(Latent, EmptyDeterministicAndStandardNormal) {
  EXPECT_EQ(sample_latent(0, 1).size(), 0u);
  EXPECT_EQ(sample_latent(4, 9).storage(), sample_latent(4, 9).storage());
  const TensorF z = sample_latent(1000, 2);
  ASSERT_EQ(z.shape(), (Shape{1000, kLatentDim}));
  double mean = 0.0;
  for (float v : z) mean += v;
  mean /= static_cast<double>(z.size());
  double var = 0.0;
  for (float v : z) var += (v - mean) * (v - mean);
  var /= static_cast<double>(z.size());
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Generator, ShapeRangeAndDeterminism) {
  const auto arch = GanArchitecture::miniature(16);
  GeneratorNet g(arch);
  g.initialize(3);
  const TensorF z = sample_latent(72, 4);
  const auto chips = generate(g, z);
  ASSERT_EQ(chips.size(), 72u);
  for (const auto& c : chips) {
    EXPECT_EQ(c.height(), kChipSide);
    EXPECT_EQ(c.width(), kChipSide);
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_GT(c.data()[i], -1.0f);
      EXPECT_LT(c.data()[i], 1.0f);
    }
  }
  const auto again = generate(g, z);
  for (std::size_t i = 0; i < chips.size(); ++i) EXPECT_EQ(chips[i], again[i]);
}

TEST(Generator, UninitializedParamsAreRejected) {
  GeneratorNet g(GanArchitecture::miniature(16));
  EXPECT_THROW(generate(g, sample_latent(1, 0)), std::logic_error);
}

TEST(Discriminator, ScoresInOpenUnitIntervalAndDuplicatesAgree) {
  DiscriminatorNet d(GanArchitecture::miniature(16));
  d.initialize(5);
  const auto recs = synthesize_cifar_like(3, 6);
  auto chips = records_to_chips(recs);
  chips.push_back(chips[1]);
  const auto p = discriminate(d, chips);
  ASSERT_EQ(p.size(), 4u);
  for (float v : p) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_EQ(p[1], p[3]);
  EXPECT_THROW(discriminate(d, {ImageChip(16, 16)}), std::invalid_argument);
}

TEST(Discriminator, FullSizeProbeDimensionIsPinned) {
  EXPECT_EQ(feature_dim(GanArchitecture{}), 28672u);
  EXPECT_EQ(16 * (256 + 512 + 1024), 28672);
}

TEST(GanLossesExamples, LimitCasesAndPositivity) {
  const double eps = kProbabilityClip;
  const std::vector<double> real{1.0 - eps, 1.0 - eps}, fake{eps, eps};
  const auto perfect = gan_losses<double>(real, fake);
  EXPECT_NEAR(perfect.d_loss, 0.0, 1e-6);
  const std::vector<double> fooled{1.0 - eps};
  EXPECT_NEAR(gan_losses<double>(real, fooled).g_loss, 0.0, 1e-6);
  EXPECT_THROW(gan_losses<double>({}, fake), std::invalid_argument);
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> r(3), f(3);
    fill_uniform(std::span<double>(r), rng, 0.0, 1.0);
    fill_uniform(std::span<double>(f), rng, 0.0, 1.0);
    const auto l = gan_losses<double>(r, f);
    EXPECT_GE(l.d_loss, 0.0);
    EXPECT_GE(l.g_loss, 0.0);
  }
}

GanTrainConfig tiny_config() {
  GanTrainConfig cfg;
  cfg.batch_size = 72;
  cfg.epochs = 1;
  cfg.seed = 11;
  cfg.architecture = GanArchitecture::miniature(16);
  return cfg;
}

TEST(TrainGan, IterationAccountingDropsPartialBatches) {
  auto cfg = tiny_config();
  const auto recs = synthesize_cifar_like(150, 7);
  const auto one = train_gan(std::span(recs).first(72), cfg);
  EXPECT_EQ(one.log.size(), 1u);
  cfg.epochs = 2;
  const auto two = train_gan(recs, cfg);
  ASSERT_EQ(two.log.size(), 4u);  // floor(150 / 72) = 2 per epoch
  EXPECT_EQ(two.log.back().epoch, 1u);
  for (const auto& row : two.log) {
    EXPECT_TRUE(std::isfinite(row.d_loss));
    EXPECT_TRUE(std::isfinite(row.g_loss));
  }
  EXPECT_THROW(train_gan(std::span(recs).first(71), cfg), DataError);
}

TEST(TrainGan, RejectsInvalidConfig) {
  auto cfg = tiny_config();
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(TrainGan, IdenticalSeedsGiveIdenticalCheckpoints) {
  const auto cfg = tiny_config();
  const auto recs = synthesize_cifar_like(144, 8);
  auto a = train_gan(recs, cfg);
  auto b = train_gan(recs, cfg);
  EXPECT_EQ(encode_checkpoint(gan_checkpoint(a.generator, a.discriminator, {})),
            encode_checkpoint(gan_checkpoint(b.generator, b.discriminator, {})));
}

TEST(TrainGan, CheckpointRestoresBothNetworks) {
  auto cfg = tiny_config();
  const auto dir = std::filesystem::temp_directory_path() / "dcssd_test_gan_ckpt";
  std::filesystem::remove_all(dir);
  cfg.checkpoint_every = 1;
  cfg.checkpoint_dir = dir;
  const auto recs = synthesize_cifar_like(144, 9);
  auto trained = train_gan(recs, cfg);
  EXPECT_FALSE(std::filesystem::is_empty(dir));
  auto [g, d] = load_gan(gan_checkpoint(trained.generator, trained.discriminator, {}));
  const TensorF z = sample_latent(3, 1);
  const auto x = generate(trained.generator, z);
  const auto y = generate(g, z);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
  EXPECT_EQ(discriminate(trained.discriminator, x), discriminate(d, x));

  const auto csv = dir / "log.csv";
  write_gan_log_csv(csv, trained.log);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "iteration,epoch,d_loss,g_loss,mean_d_real,mean_d_fake,wall_ms");
}

}  // namespace
}  // namespace dcssd

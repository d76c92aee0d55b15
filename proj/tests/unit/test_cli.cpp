// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <unistd.h>
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcssd/cifar.hpp"
#include "dcssd/cli.hpp"
#include "dcssd/errors.hpp"
#include "dcssd/fetch.hpp"
#include "dcssd/manifest.hpp"
#include "dcssd/run_config.hpp"

namespace dcssd::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

fs::path fresh_dir(const std::string& name) {
  // The pid keeps concurrently running test processes apart.
  const fs::path dir =
      fs::temp_directory_path() / ("dcssd_cli_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

TEST(RunConfig, DefaultsRoundTripAndPaperTrainingDefaults) {
  const RunConfig c;
  EXPECT_EQ(c.gan.train.batch_size, 72u);
  EXPECT_EQ(c.gan.train.epochs, 25u);
  EXPECT_EQ(c.workers, 1u);
  EXPECT_EQ(RunConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_EQ(RunConfig::from_json(json::object()).to_json(), c.to_json());
}

TEST(RunConfig, RejectsUnknownKeysStageSeedsAndInvalidValues) {
  EXPECT_THROW(RunConfig::from_json({{"sed", 1}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_json({{"gan", {{"epoch", 3}}}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_json({{"paths", {{"cifar", "x"}}}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_json({{"eval", {{"iou", 0.5}}}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_json({{"detector", {{"seed", 3}}}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_json({{"cascade", {{"projection", {{"seed", 3}}}}}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_json({{"gan", {{"batch_size", 1}}}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_json({{"bench", {{"split", "val"}}}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_json({{"gan", {{"epochs", "many"}}}}), std::invalid_argument);
}

TEST(RunConfig, StageSeedsDifferAndFollowTheGlobalSeed) {
  RunConfig a, b;
  b.seed = 1;
  EXPECT_NE(stage_seed(a, Stage::Gan), stage_seed(a, Stage::Detector));
  EXPECT_NE(stage_seed(a, Stage::Gan), stage_seed(b, Stage::Gan));
  EXPECT_EQ(resolve("/o", "x.ckpt"), fs::path("/o/x.ckpt"));
  EXPECT_EQ(resolve("/o", "/abs/x.ckpt"), fs::path("/abs/x.ckpt"));
}

TEST(Manifest, GitBlobHashMatchesGit) {
  const std::string hello = "hello\n";
  EXPECT_EQ(git_blob_hash({reinterpret_cast<const std::uint8_t*>(hello.data()), hello.size()}),
            "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(git_blob_hash({}), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Manifest, DirectoryHashTracksContentAndNames) {
  const fs::path dir = fresh_dir("hash");
  fs::create_directories(dir / "sub");
  write_text(dir / "a.txt", "a");
  write_text(dir / "sub" / "b.txt", "b");
  const std::string h0 = content_hash(dir);
  EXPECT_EQ(content_hash(dir), h0);
  write_text(dir / "a.txt", "A");
  EXPECT_NE(content_hash(dir), h0);
  write_text(dir / "a.txt", "a");
  EXPECT_EQ(content_hash(dir), h0);
  fs::rename(dir / "a.txt", dir / "c.txt");
  EXPECT_NE(content_hash(dir), h0);
}

std::vector<std::uint8_t> gzip(const std::vector<std::uint8_t>& raw) {
  z_stream zs{};
  EXPECT_EQ(deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY), Z_OK);
  std::vector<std::uint8_t> out(deflateBound(&zs, raw.size()) + 64);
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  EXPECT_EQ(deflate(&zs, Z_FINISH), Z_STREAM_END);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

// ustar writer for test fixtures.
void tar_member(std::vector<std::uint8_t>& tar, const std::string& name,
                const std::vector<std::uint8_t>& body, char type = '0') {
  std::vector<std::uint8_t> h(512, 0);
  std::memcpy(h.data(), name.data(), name.size());
  std::snprintf(reinterpret_cast<char*>(&h[100]), 8, "%07o", 0644);
  std::snprintf(reinterpret_cast<char*>(&h[124]), 12, "%011o", static_cast<unsigned>(body.size()));
  h[156] = static_cast<std::uint8_t>(type);
  std::memcpy(&h[257], "ustar", 5);
  std::memset(&h[148], ' ', 8);
  unsigned sum = 0;
  for (std::uint8_t b : h) sum += b;
  std::snprintf(reinterpret_cast<char*>(&h[148]), 8, "%06o", sum);
  tar.insert(tar.end(), h.begin(), h.end());
  tar.insert(tar.end(), body.begin(), body.end());
  tar.resize((tar.size() + 511) / 512 * 512, 0);
}

TEST(Fetch, GunzipAndUntarRecoverMembers) {
  std::vector<std::uint8_t> tar;
  tar_member(tar, "d/", {}, '5');
  tar_member(tar, "d/one.txt", {'1'});
  std::vector<std::uint8_t> big(1500);
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<std::uint8_t>(i * 7);
  tar_member(tar, "d/big.bin", big);
  tar.resize(tar.size() + 1024, 0);
  const auto files = untar(gunzip(gzip(tar)));
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files.at("d/one.txt"), std::vector<std::uint8_t>{'1'});
  EXPECT_EQ(files.at("d/big.bin"), big);

  auto gz = gzip(tar);
  gz.resize(gz.size() / 2);
  EXPECT_THROW(gunzip(gz), DataError);
  EXPECT_THROW(gunzip(std::vector<std::uint8_t>{1, 2, 3, 4}), DataError);
  tar.resize(700);
  EXPECT_THROW(untar(tar), DataError);
}

TEST(Fetch, CifarArchiveInstallsAllSixBatches) {
  std::vector<std::uint8_t> tar;
  std::vector<std::vector<CifarRecord>> batches;
  const char* names[] = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                         "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"};
  for (int k = 0; k < 6; ++k) {
    batches.push_back(synthesize_cifar_like(3, 100 + k));
    tar_member(tar, std::string("cifar-10-batches-bin/") + names[k], serialize_cifar10(batches.back()));
  }
  tar_member(tar, "cifar-10-batches-bin/readme.html", {'x'});
  const fs::path dir = fresh_dir("install");
  EXPECT_EQ(install_cifar_archive(gzip(tar), dir).size(), 6u);
  const auto train = load_cifar10_split(dir, CifarSplit::Train);
  ASSERT_EQ(train.size(), 15u);
  EXPECT_EQ(train[3], batches[1][0]);
  EXPECT_EQ(load_cifar10_split(dir, CifarSplit::Test), batches[5]);

  std::vector<std::uint8_t> partial;
  tar_member(partial, "cifar-10-batches-bin/data_batch_1.bin", serialize_cifar10(batches[0]));
  EXPECT_THROW(install_cifar_archive(gzip(partial), fresh_dir("install_partial")), DataError);
}

TEST(Cli, UsageErrorsExitOneWithHelpOnStderr) {
  auto r = run({});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  r = run({"frobnicate"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("train-gan"), std::string::npos);
  r = run({"train-gan", "--bogus"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("--batch-size"), std::string::npos);
  r = run({"enhance"});  // --input is required
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST(Cli, MissingConfigIsADataErrorNamingThePath) {
  const fs::path missing = fresh_dir("missing") / "nope.json";
  const auto r = run({"compare", "--config", missing.string(), "--out", missing.parent_path().string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find(missing.string()), std::string::npos);
}

TEST(Cli, MissingInputsAndBadConfigValues) {
  const fs::path dir = fresh_dir("inputs");
  auto r = run({"train-gan", "--out", dir.string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("cifar-10-batches-bin"), std::string::npos);
  write_text(dir / "bad.json", R"({"gan": {"epoch": 3}})");
  r = run({"train-gan", "--config", (dir / "bad.json").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("gan.epoch"), std::string::npos);
  write_text(dir / "broken.json", "{");
  EXPECT_EQ(run({"report", "--config", (dir / "broken.json").string(), "--out", dir.string()}).code,
            kExitData);
}

// Tiny end-to-end fixture: synthetic data, a miniature GAN and a narrow detector.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fresh_dir("pipeline");
    write_text(dir_ / "run.json", R"({
      "seed": 3,
      "gan": {"records": 72, "epochs": 3, "batch_size": 36,
              "architecture": {"latent_dim": 100, "generator_channels": [128, 64, 32],
                               "discriminator_channels": [32, 64, 128]}},
      "classifier": {"records": 60, "test_records": 20, "l2_lambda": 0.01, "max_iterations": 50},
      "detector": {"backbone_channels": [8, 8, 8, 8, 8], "epochs": 1},
      "train_bench": {"scene_count": 8},
      "bench": {"scene_count": 3},
      "cascade": {"projection": {"steps": 2, "restarts": 1}}
    })");
    ASSERT_EQ(run({"fetch-data", "--synthetic", "--train-count", "200", "--test-count", "60", "--out",
                   dir_.string()}).code, kExitOk);
  }
  static Outcome stage(const std::string& name, std::vector<std::string> extra = {},
                       const fs::path& out = dir_) {
    std::vector<std::string> args{name, "--config", (dir_ / "run.json").string(), "--out", out.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }
  static fs::path dir_;
};

fs::path CliPipeline::dir_;

TEST_F(CliPipeline, FlagsBeatConfigWhichBeatsDefaults) {
  const auto r = stage("train-gan", {"--batch-size", "24"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json m = read_json(dir_ / "manifest.train-gan.json");
  EXPECT_EQ(m["config"]["gan"]["batch_size"], 24);                  // flag
  EXPECT_EQ(m["config"]["gan"]["epochs"], 3);                       // config file
  EXPECT_EQ(m["config"]["gan"]["learning_rate"], 2e-4);             // built-in default
  EXPECT_EQ(m["seed"], 3);
  EXPECT_EQ(m["seeds"]["gan"], stage_seed(RunConfig::from_json(m["config"]), Stage::Gan));
  EXPECT_EQ(m["inputs"][0]["hash"], content_hash(dir_ / "cifar-10-batches-bin"));
  EXPECT_TRUE(m["timings"].contains("train"));
  EXPECT_EQ(m["input_hash"].get<std::string>().size(), 40u);
  // The echoed config is itself a valid config.
  EXPECT_NO_THROW(RunConfig::from_json(m["config"]));
}

TEST_F(CliPipeline, IdenticalConfigAndSeedGiveIdenticalArtifacts) {
  const fs::path a = fresh_dir("pipeline_a"), b = fresh_dir("pipeline_b");
  for (const auto& out : {a, b}) {
    const auto data = "--data=" + (dir_ / "cifar-10-batches-bin").string();
    ASSERT_EQ(stage("train-gan", {data}, out).code, kExitOk);
    ASSERT_EQ(stage("train-classifier", {data}, out).code, kExitOk);
  }
  EXPECT_EQ(content_hash(a / "gan.ckpt"), content_hash(b / "gan.ckpt"));
  EXPECT_EQ(content_hash(a / "classifier.ckpt"), content_hash(b / "classifier.ckpt"));
  EXPECT_TRUE(read_json(a / "manifest.train-classifier.json")["metrics"].contains("test_accuracy"));
}

TEST_F(CliPipeline, FullChainWritesReportAndManifests) {
  ASSERT_EQ(stage("train-gan").code, kExitOk);
  ASSERT_EQ(stage("train-classifier").code, kExitOk);
  ASSERT_EQ(stage("compose-bench", {"--train"}).code, kExitOk);
  ASSERT_EQ(stage("compose-bench").code, kExitOk);
  ASSERT_EQ(stage("train-detector").code, kExitOk);
  ASSERT_EQ(stage("detect", {"--conf", "0.0"}).code, kExitOk);
  std::ifstream jsonl(dir_ / "detections.jsonl");
  std::string line;
  ASSERT_TRUE(static_cast<bool>(std::getline(jsonl, line)));
  EXPECT_TRUE(json::parse(line).contains("scene_id"));

  const auto cmp = stage("compare", {"--t-rescore", "1.0"});
  ASSERT_EQ(cmp.code, kExitOk) << cmp.err;
  const json report = read_json(dir_ / "report.json");
  EXPECT_EQ(report["scenes"].size(), 3u);
  EXPECT_EQ(report["paper_reference"]["ssd_only"], 0.355);
  // Promotion disabled: both arms must agree.
  EXPECT_EQ(report["aggregate"]["baseline"], report["aggregate"]["cascade"]);
  EXPECT_EQ(read_json(dir_ / "manifest.compare.json")["config"]["cascade"]["t_rescore"], 1.0);

  const auto rep = stage("report");
  EXPECT_EQ(rep.code, kExitOk);
  EXPECT_NE(rep.out.find("detection rate"), std::string::npos);
  for (const char* sub : {"fetch-data", "train-gan", "train-classifier", "compose-bench",
                          "train-detector", "detect", "compare", "report"}) {
    EXPECT_TRUE(fs::exists(dir_ / (std::string("manifest.") + sub + ".json"))) << sub;
  }
}

TEST_F(CliPipeline, NonFiniteTrainingLossExitsThree) {
  ASSERT_EQ(stage("compose-bench", {"--train"}).code, kExitOk);
  const auto r = stage("train-detector", {"--lr", "1e30", "--epochs", "3"}, fresh_dir("pipeline_nan"));
  EXPECT_EQ(r.code, kExitData) << "relative train_scenes should not resolve in a fresh --out";
  const auto abs = stage("train-detector",
                         {"--lr", "1e30", "--epochs", "3", "--train-scenes", (dir_ / "train_scenes").string()},
                         fresh_dir("pipeline_nan"));
  EXPECT_EQ(abs.code, kExitNumerical);
  EXPECT_NE(abs.err.find("non-finite"), std::string::npos);
}

TEST_F(CliPipeline, EnhanceWritesA32x32Png) {
  ASSERT_EQ(stage("train-gan").code, kExitOk);
  const auto png = dir_ / "scenes" / "scene_00000.png";
  if (!fs::exists(png)) ASSERT_EQ(stage("compose-bench").code, kExitOk);
  const auto r = stage("enhance", {"--input", png.string(), "--steps", "3"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json m = read_json(dir_ / "manifest.enhance.json");
  EXPECT_LE(m["metrics"]["final_loss"].get<double>(), m["metrics"]["initial_loss"].get<double>());
  EXPECT_EQ(m["config"]["cascade"]["projection"]["steps"], 3);
  EXPECT_TRUE(fs::exists(dir_ / "enhanced.png"));
}

}  // namespace
}  // namespace dcssd::cli

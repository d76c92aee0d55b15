// SPDX-License-Identifier: Apache-2.0
#include "dcssd/run_config.hpp"

#include <fstream>
#include <set>

#include "dcssd/errors.hpp"
#include "dcssd/random.hpp"

namespace dcssd::cli {
namespace {

using nlohmann::json;

// Reads optional keys of one section and rejects anything it was not asked about.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + name_ + "' must be an object");
  }
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) {
        if (key == "seed") {
          throw std::invalid_argument("config: '" + name_ +
                                      ".seed' is not settable; stage seeds derive from the global seed");
        }
        throw std::invalid_argument("config: unknown key '" + name_ + "." + key + "'");
      }
    }
  }
  template <typename T>
  void read(const std::string& key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }
  const json* sub(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json without_seed(json j) {
  j.erase("seed");
  return j;
}

void read_paths(const json& j, RunPaths& p) {
  Section s(j, "paths");
  std::string v;
  auto path = [&](const char* key, std::filesystem::path& field) {
    v = field.string();
    s.read(key, v);
    field = v;
  };
  path("data_dir", p.data_dir);
  path("gan", p.gan);
  path("classifier", p.classifier);
  path("detector", p.detector);
  path("train_scenes", p.train_scenes);
  path("scenes", p.scenes);
  s.finish();
}

void read_gan(const json& j, GanStage& g) {
  Section s(j, "gan");
  s.read("batch_size", g.train.batch_size);
  s.read("epochs", g.train.epochs);
  s.read("learning_rate", g.train.adam.learning_rate);
  s.read("beta1", g.train.adam.beta1);
  s.read("beta2", g.train.adam.beta2);
  s.read("checkpoint_every", g.train.checkpoint_every);
  s.read("records", g.records);
  if (const json* a = s.sub("architecture")) {
    try {
      g.train.architecture = GanArchitecture::from_json(*a);
    } catch (const json::exception& e) {
      throw std::invalid_argument(std::string("config: bad gan.architecture: ") + e.what());
    }
  }
  s.finish();
}

void read_classifier(const json& j, ClassifierStage& c) {
  Section s(j, "classifier");
  s.read("l2_lambda", c.train.l2_lambda);
  s.read("max_iterations", c.train.max_iterations);
  s.read("gradient_tolerance", c.train.gradient_tolerance);
  s.read("records", c.records);
  s.read("test_records", c.test_records);
  s.finish();
}

const char* split_name(CifarSplit s) { return s == CifarSplit::Train ? "train" : "test"; }

void read_bench(const json& j, const std::string& name, BenchStage& b) {
  Section s(j, name);
  auto& spec = b.spec;
  s.read("scene_count", spec.scene_count);
  s.read("canvas_size", spec.canvas_size);
  s.read("min_objects", spec.min_objects);
  s.read("max_objects", spec.max_objects);
  s.read("scale_factors", spec.scale_factors);
  s.read("box_side_per_scale", spec.box_side_per_scale);
  s.read("side_jitter", spec.side_jitter);
  s.read("blur_sigma", spec.blur_sigma);
  s.read("noise_sigma", spec.noise_sigma);
  std::string split = split_name(b.split);
  s.read("split", split);
  if (split == "train") b.split = CifarSplit::Train;
  else if (split == "test") b.split = CifarSplit::Test;
  else throw std::invalid_argument("config: " + name + ".split must be \"train\" or \"test\"");
  s.finish();
}

json bench_json(const BenchStage& b) {
  const auto& s = b.spec;
  return {{"scene_count", s.scene_count},
          {"canvas_size", s.canvas_size},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"scale_factors", s.scale_factors},
          {"box_side_per_scale", s.box_side_per_scale},
          {"side_jitter", s.side_jitter},
          {"blur_sigma", s.blur_sigma},
          {"noise_sigma", s.noise_sigma},
          {"split", split_name(b.split)}};
}

// Rejects "seed" inside stage configs that carry one, then parses with the module's reader.
template <typename Config>
Config parse_seedless(const json& j, const std::string& name) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + name + "' must be an object");
  if (j.contains("seed")) {
    throw std::invalid_argument("config: '" + name +
                                ".seed' is not settable; stage seeds derive from the global seed");
  }
  return Config::from_json(j);
}

}  // namespace

RunConfig::RunConfig() {
  train_bench.spec.scene_count = 2000;
  train_bench.split = CifarSplit::Train;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  {
    Section s(j, "config");
    s.read("seed", c.seed);
    s.read("workers", c.workers);
    if (const json* v = s.sub("paths")) read_paths(*v, c.paths);
    if (const json* v = s.sub("gan")) read_gan(*v, c.gan);
    if (const json* v = s.sub("classifier")) read_classifier(*v, c.classifier);
    if (const json* v = s.sub("detector")) c.detector = parse_seedless<DetectorConfig>(*v, "detector");
    if (const json* v = s.sub("train_bench")) read_bench(*v, "train_bench", c.train_bench);
    if (const json* v = s.sub("bench")) read_bench(*v, "bench", c.bench);
    if (const json* v = s.sub("cascade")) {
      if (v->is_object() && v->contains("projection")) {
        parse_seedless<ProjectionConfig>(v->at("projection"), "cascade.projection");
      }
      c.cascade = CascadeConfig::from_json(*v);
    }
    if (const json* v = s.sub("eval")) c.eval = EvalConfig::from_json(*v);
    s.finish();
  }
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json gan_j = without_seed(gan.train.to_json());
  gan_j["records"] = gan.records;
  json cascade_j = cascade.to_json();
  cascade_j["projection"] = without_seed(cascade_j["projection"]);
  return {{"seed", seed},
          {"workers", workers},
          {"paths",
           {{"data_dir", paths.data_dir.string()},
            {"gan", paths.gan.string()},
            {"classifier", paths.classifier.string()},
            {"detector", paths.detector.string()},
            {"train_scenes", paths.train_scenes.string()},
            {"scenes", paths.scenes.string()}}},
          {"gan", gan_j},
          {"classifier",
           {{"l2_lambda", classifier.train.l2_lambda},
            {"max_iterations", classifier.train.max_iterations},
            {"gradient_tolerance", classifier.train.gradient_tolerance},
            {"records", classifier.records},
            {"test_records", classifier.test_records}}},
          {"detector", without_seed(detector.to_json())},
          {"train_bench", bench_json(train_bench)},
          {"bench", bench_json(bench)},
          {"cascade", cascade_j},
          {"eval", eval.to_json()}};
}

void RunConfig::validate() const {
  if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
  gan.train.validate();
  if (!(classifier.train.l2_lambda > 0.0)) {
    throw std::invalid_argument("config: classifier.l2_lambda must be positive");
  }
  if (classifier.records < 2) throw std::invalid_argument("config: classifier.records must be >= 2");
  detector.validate();
  train_bench.spec.validate();
  bench.spec.validate();
  cascade.validate();
  eval.validate();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

std::uint64_t stage_seed(const RunConfig& cfg, Stage stage) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(stage));
}

std::filesystem::path resolve(const std::filesystem::path& out, const std::filesystem::path& p) {
  return p.is_absolute() ? p : out / p;
}

}  // namespace dcssd::cli

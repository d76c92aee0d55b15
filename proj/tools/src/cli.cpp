// SPDX-License-Identifier: Apache-2.0
#include "dcssd/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>

#include "dcssd/cascade.hpp"
#include "dcssd/checkpoint.hpp"
#include "dcssd/cifar.hpp"
#include "dcssd/errors.hpp"
#include "dcssd/eval.hpp"
#include "dcssd/features.hpp"
#include "dcssd/fetch.hpp"
#include "dcssd/gan.hpp"
#include "dcssd/manifest.hpp"
#include "dcssd/png_io.hpp"
#include "dcssd/run_config.hpp"
#include "dcssd/scene.hpp"
#include "dcssd/ssd.hpp"

namespace dcssd::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

// Per-stage flags. An unset optional leaves the config-file (or default) value in place.
struct Overrides {
  std::optional<std::string> data, gan, classifier, detector, scenes, train_scenes;
  std::optional<std::size_t> epochs, batch_size, records, test_records, count, steps, restarts,
      max_iterations, arch_divisor;
  std::optional<double> lr, lambda, conf, t_high, t_low, t_rescore, step_size;
  std::optional<std::string> split;
  bool synthetic = false;
  bool train_bench = false;
  std::size_t train_count = 50000;
  std::size_t test_count = 10000;
  std::string url = kCifarUrl;
  std::string input;
  std::string output = "enhanced.png";
  std::string report;
};

template <typename T>
void apply(const std::optional<T>& v, T& field) {
  if (v) field = *v;
}

void apply(const std::optional<std::string>& v, fs::path& field) {
  if (v) field = *v;
}

CifarSplit parse_split(const std::string& s) {
  if (s == "train") return CifarSplit::Train;
  if (s == "test") return CifarSplit::Test;
  throw std::invalid_argument("--split must be train or test");
}

RunConfig resolve_config(const Common& c, const Overrides& o) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  apply(c.seed, cfg.seed);
  apply(c.workers, cfg.workers);
  apply(o.data, cfg.paths.data_dir);
  apply(o.gan, cfg.paths.gan);
  apply(o.classifier, cfg.paths.classifier);
  apply(o.detector, cfg.paths.detector);
  apply(o.scenes, cfg.paths.scenes);
  apply(o.train_scenes, cfg.paths.train_scenes);
  return cfg;
}

std::vector<CifarRecord> leading_records(std::vector<CifarRecord> recs, std::size_t n,
                                         const char* what) {
  if (n == 0) return recs;
  if (n > recs.size()) {
    throw DataError(std::string(what) + ": requested " + std::to_string(n) + " records, only " +
                    std::to_string(recs.size()) + " available");
  }
  recs.resize(n);
  return recs;
}

struct Run {
  RunConfig cfg;
  fs::path out;
  std::ostream& log;
  RunManifest manifest;

  fs::path path(const fs::path& p) const { return resolve(out, p); }
  fs::path input(const std::string& label, const fs::path& p) {
    const fs::path full = path(p);
    if (!fs::exists(full)) throw DataError(label + " not found: " + full.string());
    manifest.add_input(label, full);
    return full;
  }
};

void fetch_data(Run& r, const Overrides& o) {
  const fs::path dir = r.path(r.cfg.paths.data_dir);
  if (o.synthetic) {
    write_synthetic_cifar_dir(dir, o.train_count, o.test_count, r.cfg.seed);
    r.manifest.set("source", {{"synthetic", true}, {"train", o.train_count}, {"test", o.test_count}});
  } else {
    r.log << "downloading " << o.url << "\n";
    const auto bytes = http_get(o.url);
    r.manifest.mark("download");
    r.manifest.set("source", {{"url", o.url}, {"archive_hash", git_blob_hash(bytes)}});
    install_cifar_archive(bytes, dir);
  }
  r.manifest.mark("write");
  r.manifest.add_output("data_dir", dir);
  r.log << "CIFAR-10 batches in " << dir.string() << "\n";
}

void train_gan_stage(Run& r, const Overrides& o) {
  auto& stage = r.cfg.gan;
  apply(o.epochs, stage.train.epochs);
  apply(o.batch_size, stage.train.batch_size);
  apply(o.records, stage.records);
  apply(o.lr, stage.train.adam.learning_rate);
  if (o.arch_divisor) stage.train.architecture = GanArchitecture::miniature(*o.arch_divisor);
  r.cfg.validate();

  const fs::path data = r.input("data_dir", r.cfg.paths.data_dir);
  const auto records =
      leading_records(load_cifar10_split(data, CifarSplit::Train), stage.records, "train-gan");
  r.manifest.mark("load");

  GanTrainConfig tc = stage.train;
  tc.seed = stage_seed(r.cfg, Stage::Gan);
  if (tc.checkpoint_every > 0) tc.checkpoint_dir = r.out / "gan_checkpoints";
  r.manifest.add_seed("gan", tc.seed);
  r.log << "training GAN on " << records.size() << " records, batch " << tc.batch_size << ", "
        << tc.epochs << " epochs\n";
  auto result = train_gan(records, tc, [&](const GanLogRow& row) {
    if (row.iteration % 10 == 0) {
      r.log << "  iter " << row.iteration << " epoch " << row.epoch << " d_loss " << row.d_loss
            << " g_loss " << row.g_loss << " D(real) " << row.mean_d_real << " D(fake) "
            << row.mean_d_fake << "\n";
    }
  });
  r.manifest.mark("train");

  const fs::path ckpt = r.path(r.cfg.paths.gan);
  save_checkpoint(ckpt, gan_checkpoint(result.generator, result.discriminator, {{"config", tc.to_json()}}));
  write_gan_log_csv(r.out / "gan_log.csv", result.log);
  r.manifest.add_output("gan", ckpt);
  r.manifest.add_output("log", r.out / "gan_log.csv");
}

double probe_accuracy(DiscriminatorNet& d, const LinearClassifier& clf,
                      std::span<const CifarRecord> records) {
  const TensorF f = extract_features_batch(d, records_to_chips(records));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (classify_features(clf, f.slab(i)).class_id == records[i].label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

void train_classifier_stage(Run& r, const Overrides& o) {
  auto& stage = r.cfg.classifier;
  apply(o.records, stage.records);
  apply(o.test_records, stage.test_records);
  apply(o.lambda, stage.train.l2_lambda);
  apply(o.max_iterations, stage.train.max_iterations);
  r.cfg.validate();

  auto [g, d] = load_gan(load_checkpoint(r.input("gan", r.cfg.paths.gan)));
  const fs::path data = r.input("data_dir", r.cfg.paths.data_dir);
  const auto train = leading_records(load_cifar10_split(data, CifarSplit::Train), stage.records,
                                     "train-classifier");
  r.manifest.mark("load");

  TensorF features = extract_features_batch(d, records_to_chips(train));
  r.manifest.mark("features");
  std::vector<int> labels;
  for (const auto& rec : train) labels.push_back(rec.label);
  LinearTrainConfig lc = stage.train;
  lc.seed = stage_seed(r.cfg, Stage::Classifier);
  r.manifest.add_seed("classifier", lc.seed);
  const LinearTrainResult fit = train_linear(std::move(features), labels, lc);
  r.manifest.mark("train");
  r.log << "linear probe: " << fit.iterations << " iterations, gradient norm " << fit.gradient_norm
        << (fit.converged ? " (converged)" : " (iteration cap)") << "\n";

  json metrics = {{"iterations", fit.iterations},
                  {"converged", fit.converged},
                  {"objective", fit.objective_trace.back()}};
  if (stage.test_records > 0) {
    const auto test = leading_records(load_cifar10_split(data, CifarSplit::Test),
                                      stage.test_records, "train-classifier");
    const double acc = probe_accuracy(d, fit.classifier, test);
    metrics["test_accuracy"] = acc;
    r.log << "held-out accuracy on " << test.size() << " test records: " << acc << "\n";
    r.manifest.mark("evaluate");
  }
  r.manifest.set("metrics", metrics);

  const fs::path ckpt = r.path(r.cfg.paths.classifier);
  save_checkpoint(ckpt, classifier_checkpoint(fit.classifier, {{"metrics", metrics}}));
  r.manifest.add_output("classifier", ckpt);
}

void compose_bench_stage(Run& r, const Overrides& o) {
  BenchStage& bench = o.train_bench ? r.cfg.train_bench : r.cfg.bench;
  apply(o.count, bench.spec.scene_count);
  if (o.split) bench.split = parse_split(*o.split);
  r.cfg.validate();

  const auto records = load_cifar10_split(r.input("data_dir", r.cfg.paths.data_dir), bench.split);
  r.manifest.mark("load");
  const std::uint64_t seed = stage_seed(r.cfg, o.train_bench ? Stage::TrainBench : Stage::Bench);
  r.manifest.add_seed(o.train_bench ? "train_bench" : "bench", seed);
  const auto scenes = compose_benchmark(records, bench.spec, seed, r.cfg.workers);
  r.manifest.mark("compose");

  const fs::path dir = r.path(o.train_bench ? r.cfg.paths.train_scenes : r.cfg.paths.scenes);
  fs::remove_all(dir);
  write_scene_archive(dir, scenes);
  r.manifest.add_output("scenes", dir);
  r.log << "wrote " << scenes.size() << " scenes to " << dir.string() << "\n";
}

void train_detector_stage(Run& r, const Overrides& o) {
  auto& dc = r.cfg.detector;
  apply(o.epochs, dc.epochs);
  apply(o.batch_size, dc.batch_size);
  apply(o.lr, dc.learning_rate);
  r.cfg.validate();

  const auto scenes = read_scene_archive(r.input("train_scenes", r.cfg.paths.train_scenes));
  r.manifest.mark("load");
  DetectorConfig cfg = dc;
  cfg.seed = stage_seed(r.cfg, Stage::Detector);
  r.manifest.add_seed("detector", cfg.seed);
  r.log << "training detector on " << scenes.size() << " scenes, " << cfg.epochs << " epochs\n";
  auto result = train_detector(scenes, cfg, [&](const DetectorLogRow& row) {
    if (row.iteration % 50 == 0) {
      r.log << "  iter " << row.iteration << " epoch " << row.epoch << " loss " << row.loss << "\n";
    }
  });
  r.manifest.mark("train");

  const fs::path ckpt = r.path(r.cfg.paths.detector);
  save_checkpoint(ckpt, detector_checkpoint(result.net, {{"config", cfg.to_json()}}));
  std::ofstream csv(r.out / "detector_log.csv");
  csv << "iteration,epoch,loss,conf_loss,loc_loss\n" << std::setprecision(9);
  for (const auto& row : result.log) {
    csv << row.iteration << ',' << row.epoch << ',' << row.loss << ',' << row.conf_loss << ','
        << row.loc_loss << '\n';
  }
  r.manifest.add_output("detector", ckpt);
}

void apply_projection(const Overrides& o, ProjectionConfig& p) {
  apply(o.steps, p.steps);
  apply(o.restarts, p.restarts);
  apply(o.step_size, p.step_size);
}

void enhance_stage(Run& r, const Overrides& o) {
  apply_projection(o, r.cfg.cascade.projection);
  r.cfg.validate();

  auto [g, d] = load_gan(load_checkpoint(r.input("gan", r.cfg.paths.gan)));
  const fs::path input = o.input;
  if (!fs::exists(input)) throw DataError("input image not found: " + input.string());
  r.manifest.add_input("image", input);
  const ImageChip chip = read_chip_png(input);
  ProjectionConfig pc = r.cfg.cascade.projection;
  pc.seed = stage_seed(r.cfg, Stage::Enhance);
  r.manifest.add_seed("enhance", pc.seed);
  const auto result = project_latent(g, resize_bilinear(chip, kChipSide, kChipSide), pc,
                                     pc.perceptual_weight > 0.0 ? &d : nullptr);
  r.manifest.mark("project");

  const fs::path png = r.path(o.output);
  write_chip_png(png, result.enhanced);
  r.manifest.add_output("enhanced", png);
  r.manifest.set("metrics", {{"initial_loss", result.initial_loss},
                             {"final_loss", result.final_loss},
                             {"accepted_steps", result.loss_trace.size() - 1},
                             {"z_star", result.z_star}});
  r.log << "projection loss " << result.initial_loss << " -> " << result.final_loss << "\n";
}

void detect_stage(Run& r, const Overrides& o) {
  apply(o.conf, r.cfg.eval.conf_thr);
  r.cfg.validate();

  DetectorNet net = load_detector(load_checkpoint(r.input("detector", r.cfg.paths.detector)));
  const auto scenes = read_scene_archive(r.input("scenes", r.cfg.paths.scenes));
  r.manifest.mark("load");
  const fs::path path = r.out / "detections.jsonl";
  std::ofstream jsonl(path);
  std::size_t total = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto dets = run_baseline(net, scenes[i].canvas, r.cfg.eval.conf_thr);
    write_detections_jsonl(jsonl, i, dets);
    total += dets.size();
  }
  jsonl.close();
  if (!jsonl) throw DataError("cannot write " + path.string());
  r.manifest.mark("detect");
  r.manifest.add_output("detections", path);
  r.log << total << " detections over " << scenes.size() << " scenes\n";
}

void print_summary(const json& report, std::ostream& os) {
  const auto& agg = report.at("aggregate");
  os << std::fixed << std::setprecision(3);
  os << "scenes: " << report.at("scenes").size() << "\n";
  os << "level    scenes  truths  baseline  cascade\n";
  for (const auto& l : report.at("levels")) {
    os << std::setw(5) << l.at("degradation_level").get<double>() << "  " << std::setw(7)
       << l.at("scenes").get<std::size_t>() << "  " << std::setw(6) << l.at("truths").get<std::size_t>()
       << "  " << std::setw(8) << l.at("baseline").get<double>() << "  " << std::setw(7)
       << l.at("cascade").get<double>() << "\n";
  }
  os << "detection rate: baseline " << agg.at("baseline").get<double>() << ", cascade "
     << agg.at("cascade").get<double>() << "\n";
  os << "precision:      baseline " << agg.at("baseline_precision").get<double>() << ", cascade "
     << agg.at("cascade_precision").get<double>() << "\n";
  if (report.contains("paper_reference")) {
    const auto& ref = report.at("paper_reference");
    os << "published reference (different data and metric): SSD only "
       << ref.at("ssd_only").get<double>() << ", cascade " << ref.at("dcgan_ssd").get<double>() << "\n";
  }
  os.unsetf(std::ios::floatfield);
  os << std::setprecision(6);
}

void compare_stage(Run& r, const Overrides& o) {
  auto& c = r.cfg.cascade;
  apply(o.t_high, c.t_high);
  apply(o.t_low, c.t_low);
  apply(o.t_rescore, c.t_rescore);
  apply_projection(o, c.projection);
  apply(o.conf, r.cfg.eval.conf_thr);
  r.cfg.validate();

  auto [g, d] = load_gan(load_checkpoint(r.input("gan", r.cfg.paths.gan)));
  const LinearClassifier clf =
      load_classifier(load_checkpoint(r.input("classifier", r.cfg.paths.classifier)));
  DetectorNet net = load_detector(load_checkpoint(r.input("detector", r.cfg.paths.detector)));
  const auto scenes = read_scene_archive(r.input("scenes", r.cfg.paths.scenes));
  r.manifest.mark("load");

  CascadeModels models{g, d, clf, net};
  const std::uint64_t seed = stage_seed(r.cfg, Stage::Cascade);
  r.manifest.add_seed("cascade", seed);
  const ComparisonReport report = run_comparison(scenes, models, c, r.cfg.eval, seed);
  r.manifest.mark("compare");
  emit_report(report, r.out);
  r.manifest.add_output("report", r.out / "report.json");
  print_summary(report.to_json(), r.log);
}

void report_stage(Run& r, const Overrides& o) {
  const fs::path path = o.report.empty() ? r.out / "report.json" : fs::path(o.report);
  std::ifstream in(path);
  if (!in) throw DataError("report not found: " + path.string());
  json report;
  try {
    report = json::parse(in);
    r.manifest.add_input("report", path);
    print_summary(report, r.log);
  } catch (const json::exception& e) {
    throw DataError("malformed report " + path.string() + ": " + e.what());
  }
}

struct Subcommand {
  const char* name;
  const char* help;
  std::function<void(Run&, const Overrides&)> run;
  std::function<void(CLI::App&, Overrides&)> flags;
};

void add_common(CLI::App& app, Common& c) {
  app.add_option("--config", c.config, "JSON run configuration");
  app.add_option("--out", c.out, "Output directory; relative config paths resolve against it")
      ->capture_default_str();
  app.add_option("--seed", c.seed, "Global seed; stage seeds derive from it");
  app.add_option("--workers", c.workers, "Worker threads where a stage supports them (1 = bit-reproducible)");
}

std::vector<Subcommand> subcommands() {
  return {
      {"fetch-data", "Download CIFAR-10 (binary version) or write a synthetic stand-in", fetch_data,
       [](CLI::App& a, Overrides& o) {
         a.add_option("--data", o.data, "Destination directory");
         a.add_flag("--synthetic", o.synthetic, "Write procedurally generated CIFAR-format batches");
         a.add_option("--train-count", o.train_count, "Synthetic train records")->capture_default_str();
         a.add_option("--test-count", o.test_count, "Synthetic test records")->capture_default_str();
         a.add_option("--url", o.url, "Archive URL")->capture_default_str();
       }},
      {"train-gan", "Train the DCGAN generator and discriminator", train_gan_stage,
       [](CLI::App& a, Overrides& o) {
         a.add_option("--data", o.data, "CIFAR-10 binary directory");
         a.add_option("--gan", o.gan, "Checkpoint to write");
         a.add_option("--epochs", o.epochs, "Training epochs");
         a.add_option("--batch-size", o.batch_size, "Minibatch size");
         a.add_option("--records", o.records, "Use the first N train records (0 = all)");
         a.add_option("--lr", o.lr, "Adam learning rate");
         a.add_option("--arch-divisor", o.arch_divisor, "Divide every channel count by N");
       }},
      {"train-classifier", "Fit the linear probe on discriminator features", train_classifier_stage,
       [](CLI::App& a, Overrides& o) {
         a.add_option("--data", o.data, "CIFAR-10 binary directory");
         a.add_option("--gan", o.gan, "GAN checkpoint");
         a.add_option("--classifier", o.classifier, "Checkpoint to write");
         a.add_option("--records", o.records, "Train records used for fitting");
         a.add_option("--test-records", o.test_records, "Test records for held-out accuracy (0 skips)");
         a.add_option("--lambda", o.lambda, "L2 penalty");
         a.add_option("--max-iterations", o.max_iterations, "Optimizer iteration cap");
       }},
      {"compose-bench", "Compose a synthetic small-object benchmark", compose_bench_stage,
       [](CLI::App& a, Overrides& o) {
         a.add_option("--data", o.data, "CIFAR-10 binary directory");
         a.add_flag("--train", o.train_bench, "Compose the detector training set instead of the test bench");
         a.add_option("--scenes", o.scenes, "Test bench directory");
         a.add_option("--train-scenes", o.train_scenes, "Training scene directory");
         a.add_option("--count", o.count, "Number of scenes");
         a.add_option("--split", o.split, "CIFAR split supplying objects (train|test)");
       }},
      {"train-detector", "Train the SSD-style detector on composed scenes", train_detector_stage,
       [](CLI::App& a, Overrides& o) {
         a.add_option("--train-scenes", o.train_scenes, "Training scene directory");
         a.add_option("--detector", o.detector, "Checkpoint to write");
         a.add_option("--epochs", o.epochs, "Training epochs");
         a.add_option("--batch-size", o.batch_size, "Minibatch size");
         a.add_option("--lr", o.lr, "Adam learning rate");
       }},
      {"enhance", "Project one image onto the generator's range", enhance_stage,
       [](CLI::App& a, Overrides& o) {
         a.add_option("--gan", o.gan, "GAN checkpoint");
         a.add_option("--input", o.input, "PNG image of any size")->required();
         a.add_option("--output", o.output, "Output PNG (32x32)")->capture_default_str();
         a.add_option("--steps", o.steps, "Gradient steps per restart");
         a.add_option("--restarts", o.restarts, "Random restarts");
         a.add_option("--step-size", o.step_size, "Initial step size");
       }},
      {"detect", "Run the detector over a scene archive", detect_stage,
       [](CLI::App& a, Overrides& o) {
         a.add_option("--detector", o.detector, "Detector checkpoint");
         a.add_option("--scenes", o.scenes, "Scene directory");
         a.add_option("--conf", o.conf, "Confidence threshold");
       }},
      {"compare", "Run baseline and cascade on the same scenes and write report files", compare_stage,
       [](CLI::App& a, Overrides& o) {
         a.add_option("--gan", o.gan, "GAN checkpoint");
         a.add_option("--classifier", o.classifier, "Classifier checkpoint");
         a.add_option("--detector", o.detector, "Detector checkpoint");
         a.add_option("--scenes", o.scenes, "Scene directory");
         a.add_option("--t-high", o.t_high, "Pass-through confidence");
         a.add_option("--t-low", o.t_low, "Lower edge of the rescue band");
         a.add_option("--t-rescore", o.t_rescore, "Classifier confidence needed for promotion");
         a.add_option("--conf", o.conf, "Baseline confidence threshold");
         a.add_option("--steps", o.steps, "Projection steps per restart");
         a.add_option("--restarts", o.restarts, "Projection restarts");
         a.add_option("--step-size", o.step_size, "Projection step size");
       }},
      {"report", "Summarize an existing report.json", report_stage,
       [](CLI::App& a, Overrides& o) {
         a.add_option("--report", o.report, "Report file (default <out>/report.json)");
       }},
  };
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Small-object detection with GAN-based enhancement: data, training, evaluation", "dcssd"};
  app.require_subcommand(1, 1);
  Common common;
  Overrides overrides;
  const auto subs = subcommands();
  std::vector<CLI::App*> handles;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(*sub, common);
    s.flags(*sub, overrides);
    handles.push_back(sub);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n";
    CLI::App* active = &app;
    for (CLI::App* h : handles) {
      if (h->parsed()) active = h;
    }
    err << active->help();
    return kExitUsage;
  }

  std::size_t which = 0;
  while (!handles[which]->parsed()) ++which;
  try {
    RunConfig cfg = resolve_config(common, overrides);
    const fs::path out_dir = common.out;
    fs::create_directories(out_dir);
    Run run{cfg, out_dir, out, RunManifest(subs[which].name, json::object(), cfg.seed)};
    subs[which].run(run, overrides);
    // Echo the configuration after stage flags were folded in.
    run.manifest.set("config", run.cfg.to_json());
    run.manifest.set("seed", run.cfg.seed);
    run.manifest.write(out_dir);
    return kExitOk;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "invalid configuration: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace dcssd::cli

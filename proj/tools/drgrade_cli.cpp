// Copyright 2026 The drgrade Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// drgrade: dataset degradation and assembly, training, evaluation,
// single-image attribution and serving.
//
// Exit codes: 0 success, 1 usage or configuration, 2 data error, 3 internal.
// Failures print one JSON line {"error": {"code", "message"}} on stderr;
// progress is JSON lines on stdout.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "drgrade/attribution.hpp"
#include "drgrade/checkpoint.hpp"
#include "drgrade/degrade.hpp"
#include "drgrade/manifest.hpp"
#include "drgrade/metrics.hpp"
#include "drgrade/service.hpp"
#include "drgrade/train.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using namespace drgrade;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

struct Failure {
  int exit_code;
  std::string code;
  std::string message;
};

[[noreturn]] void fail(int exit_code, std::string code, std::string message) {
  throw Failure{exit_code, std::move(code), std::move(message)};
}

/// Runs `f`, turning any exception into a data error with `code`.
template <typename F>
auto as_data(const std::string& code, F&& f) {
  try {
    return f();
  } catch (const Failure&) {
    throw;
  } catch (const std::exception& e) {
    fail(kData, code, e.what());
  }
}

void log_line(nlohmann::json j) {
  std::cout << j.dump() << std::endl;
}

DatasetManifest load_nonempty_manifest(const fs::path& path) {
  auto m = as_data("bad_manifest", [&] { return read_manifest(path); });
  if (m.empty()) fail(kData, "empty_manifest", "empty manifest");
  return m;
}

Checkpoint load_model_file(const fs::path& path) {
  return as_data("bad_checkpoint", [&] { return load_checkpoint(path); });
}

// -- degrade --------------------------------------------------------------------------

struct DegradeArgs {
  fs::path in, out;
  std::uint64_t seed = 0;
};

void degrade_cmd(const DegradeArgs& a) {
  const auto manifest = load_nonempty_manifest(a.in);
  fs::create_directories(a.out / "images");
  DatasetManifest result;
  result.root = a.out;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = manifest.entries[i];
    const auto img = as_data("bad_image", [&] { return load_image(manifest.resolve(e)); });
    for (const auto& v : degrade_variants(img, derive_seed(a.seed, i))) {
      char name[48];
      std::snprintf(name, sizeof name, "images/%06zu_d%d.png", i, v.code);
      save_png(v.image, a.out / name);
      result.entries.push_back({name, e.label, e.origin, v.code});
    }
  }
  write_manifest(result, a.out / "manifest.csv");
  log_line({{"event", "degrade"},
            {"inputs", manifest.size()},
            {"outputs", result.size()},
            {"manifest", (a.out / "manifest.csv").string()}});
}

// -- build-dataset --------------------------------------------------------------------

struct BuildArgs {
  std::vector<fs::path> in;
  fs::path out;
  std::size_t per_label = 0;
  std::uint64_t seed = 0;
};

void build_cmd(const BuildArgs& a) {
  std::vector<DatasetManifest> inputs;
  for (const auto& p : a.in)
    inputs.push_back(as_data("bad_manifest", [&] { return read_manifest(p); }));
  const auto out = as_data("insufficient_entries",
                           [&] { return build_balanced(inputs, a.per_label, a.seed); });
  write_manifest(out, a.out);
  const auto counts = out.counts();
  log_line({{"event", "build_dataset"}, {"entries", out.size()}, {"per_label", counts},
            {"manifest", a.out.string()}});
}

// -- train ----------------------------------------------------------------------------

struct TrainArgs {
  fs::path data, out, model_config;
  std::size_t epochs = 10;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool augment = false;
};

void train_cmd(const TrainArgs& a) {
  ModelConfig config;
  if (!a.model_config.empty()) {
    config = as_data("bad_model_config", [&] {
      std::ifstream in(a.model_config);
      if (!in) throw std::runtime_error("cannot read '" + a.model_config.string() + "'");
      auto c = nlohmann::json::parse(in).get<ModelConfig>();
      c.validate();
      return c;
    });
  }
  config.seed = a.seed;
  const auto manifest = load_nonempty_manifest(a.data);
  const auto set = as_data("bad_image", [&] { return load_training_set(manifest, config.input_size); });
  Model model(config);
  TrainOptions opt;
  opt.epochs = a.epochs;
  opt.batch_size = a.batch;
  opt.adam.lr = a.lr;
  opt.seed = a.seed;
  opt.augment = a.augment;
  const auto report = train(model, set, opt, [](const EpochStats& s) {
    log_line({{"event", "epoch"}, {"epoch", s.epoch}, {"loss", s.loss}, {"accuracy", s.accuracy}});
  });
  TrainingMetadata meta{a.epochs, report.final_loss};
  save_checkpoint(model, a.out, meta);
  log_line({{"event", "trained"},
            {"epochs", a.epochs},
            {"samples", set.size()},
            {"final_loss", report.final_loss ? nlohmann::json(*report.final_loss) : nlohmann::json(nullptr)},
            {"final_train_accuracy", report.final_train_accuracy},
            {"checkpoint", a.out.string()}});
}

// -- eval -----------------------------------------------------------------------------

struct EvalArgs {
  fs::path model, data;
  std::string format = "table";
  std::string name;
};

void eval_cmd(const EvalArgs& a) {
  const auto ckpt = load_model_file(a.model);
  const auto manifest = load_nonempty_manifest(a.data);
  const auto name = a.name.empty() ? a.model.stem().string() : a.name;
  const auto report = as_data("eval_failed", [&] { return evaluate(manifest, ckpt.model, name); });
  if (a.format == "json") {
    std::cout << report_to_json(report).dump(2) << "\n";
  } else {
    std::cout << report_table(report);
  }
  std::cout.flush();
}

// -- attribute ------------------------------------------------------------------------

struct AttributeArgs {
  fs::path model, image, out, mask_csv;
  std::size_t steps = 50;
  std::optional<int> target;
  std::string baseline = "black";
};

void attribute_cmd(const AttributeArgs& a) {
  const auto ckpt = load_model_file(a.model);
  const auto& model = ckpt.model;
  const int size = static_cast<int>(model.config().input_size);
  const auto img = as_data("bad_image", [&] { return load_image(a.image); });
  const auto x = preprocess(img, size);
  IGConfig cfg;
  cfg.steps = a.steps;
  if (a.target) {
    if (*a.target < 0 || *a.target >= GradeLabel::kCount)
      fail(kUsage, "usage", "--target must be in [0, 4]");
    cfg.target = GradeLabel(*a.target);
  }
  if (a.baseline != "black") {
    const auto base = as_data("bad_image", [&] { return load_image(a.baseline); });
    cfg.baseline = IGConfig::Baseline::custom;
    cfg.custom_baseline = preprocess(base, size);
  }
  const auto prediction = predict_tensor(model, x, a.model.stem().string());
  const auto mask = integrated_gradients_tensor(model, x, cfg);
  save_png(render_overlay(mask, tensor_to_image(x)), a.out);
  if (!a.mask_csv.empty()) save_mask_csv(mask, a.mask_csv);
  double max_abs = 0.0;
  for (double v : mask.values) max_abs = std::max(max_abs, std::abs(v));
  log_line({{"grade", prediction.grade.value()},
            {"grade_name", std::string(prediction.grade.name())},
            {"probabilities", prediction.probabilities},
            {"target", mask.target.value()},
            {"steps", mask.steps},
            {"completeness_gap", mask.completeness_gap},
            {"score_input", mask.score_input},
            {"score_baseline", mask.score_baseline},
            {"attribution_sum", mask.attribution_sum},
            {"mask_max_abs", max_abs},
            {"overlay", a.out.string()}});
}

// -- serve ----------------------------------------------------------------------------

void serve_cmd(const fs::path& config_path) {
  ServiceConfig config;
  try {
    config = apply_env_overrides(load_service_config(config_path));
  } catch (const std::exception& e) {
    fail(kUsage, "bad_config", e.what());
  }
  if (!fs::is_directory(config.model_dir))
    fail(kUsage, "bad_config", "model directory '" + config.model_dir.string() + "' does not exist");

  // Signals are taken synchronously by a watcher thread; every other thread
  // inherits the blocked mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGTERM);
  sigaddset(&signals, SIGINT);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  std::unique_ptr<Service> service;
  try {
    service = std::make_unique<Service>(config);
  } catch (const std::exception& e) {
    fail(kUsage, "bad_config", e.what());
  }
  if (service->bind() < 0) {
    fail(kInternal, "bind_failed",
         "cannot bind " + config.host + ":" + std::to_string(config.port));
  }
  std::atomic<bool> done{false};
  std::thread watcher([&] {
    int sig = 0;
    while (!done.load()) {
      timespec timeout{0, 200'000'000};
      siginfo_t info;
      sig = sigtimedwait(&signals, &info, &timeout);
      if (sig > 0) break;
    }
    if (sig > 0) {
      log_line({{"event", "signal"}, {"signal", sig == SIGTERM ? "SIGTERM" : "SIGINT"}});
      service->stop();
    }
  });
  service->run();
  done = true;
  watcher.join();
  service.reset();
  log_line({{"event", "shutdown"}, {"time", iso8601_utc_now()}});
}

void print_error(const Failure& f) {
  std::cout.flush();
  std::cerr << nlohmann::json{{"error", {{"code", f.code}, {"message", f.message}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drgrade: diabetic retinopathy grading toolkit"};
  app.require_subcommand(1);

  DegradeArgs degrade;
  auto* deg = app.add_subcommand("degrade", "Write the 8 degradation variants of every manifest image");
  deg->add_option("--in", degrade.in, "Input manifest")->required();
  deg->add_option("--out", degrade.out, "Output directory")->required();
  deg->add_option("--seed", degrade.seed, "Base seed");

  BuildArgs build;
  auto* bld = app.add_subcommand("build-dataset", "Sample a class-balanced manifest");
  bld->add_option("--in", build.in, "Input manifests (repeatable)")->required();
  bld->add_option("--out", build.out, "Output manifest")->required();
  bld->add_option("--per-label", build.per_label, "Entries per grade")->required()->check(CLI::PositiveNumber);
  bld->add_option("--seed", build.seed, "Sampling seed");

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train a model and write a checkpoint");
  trn->add_option("--data", tr.data, "Training manifest")->required();
  trn->add_option("--epochs", tr.epochs, "Epochs")->required();
  trn->add_option("--out", tr.out, "Checkpoint path")->required();
  trn->add_option("--lr", tr.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  trn->add_option("--batch", tr.batch, "Batch size")->check(CLI::PositiveNumber);
  trn->add_option("--seed", tr.seed, "Initialization and shuffling seed");
  trn->add_option("--model-config", tr.model_config, "JSON model configuration");
  trn->add_flag("--augment", tr.augment, "Random rotation/flip/scale/shift per epoch");

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  evl->add_option("--model", ev.model, "Checkpoint")->required();
  evl->add_option("--data", ev.data, "Manifest")->required();
  evl->add_option("--format", ev.format, "Output format")->check(CLI::IsMember({"json", "table"}));
  evl->add_option("--name", ev.name, "Model column label (default: checkpoint stem)");

  AttributeArgs at;
  auto* att = app.add_subcommand("attribute", "Integrated Gradients overlay for one image");
  att->add_option("--model", at.model, "Checkpoint")->required();
  att->add_option("--image", at.image, "Fundus image")->required();
  att->add_option("--out", at.out, "Overlay PNG")->required();
  att->add_option("--steps", at.steps, "Riemann steps")->check(CLI::Range(std::size_t{1}, kMaxIgSteps));
  att->add_option("--target", at.target, "Target grade (default: predicted)");
  att->add_option("--baseline", at.baseline, "'black' or a baseline image path");
  att->add_option("--mask-csv", at.mask_csv, "Also write the raw mask as CSV");

  fs::path serve_config;
  auto* srv = app.add_subcommand("serve", "Run the HTTP service");
  srv->add_option("--config", serve_config, "Service configuration JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error({kUsage, "usage", e.what()});
    return kUsage;
  }

  try {
    if (*deg) degrade_cmd(degrade);
    else if (*bld) build_cmd(build);
    else if (*trn) train_cmd(tr);
    else if (*evl) eval_cmd(ev);
    else if (*att) attribute_cmd(at);
    else if (*srv) serve_cmd(serve_config);
  } catch (const Failure& f) {
    print_error(f);
    return f.exit_code;
  } catch (const std::exception& e) {
    print_error({kInternal, "internal", e.what()});
    return kInternal;
  }
  return kOk;
}

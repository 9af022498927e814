// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

// kprobe command-line driver. Exit codes: 0 ok, 1 usage error, 2 invariant
// failure, 3 missing artifact.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kprobe/errors.h"
#include "kprobe/io.h"
#include "kprobe/parallel.h"
#include "kprobe/pipeline.h"

namespace {

using kprobe::Stage;

constexpr int kUsage = 1;
constexpr int kInvariant = 2;
constexpr int kMissing = 3;

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  int threads = 0;
  std::optional<std::uint64_t> seed;
};

kprobe::PipelineConfig resolve(const Options& o) {
  // Unset keys take their defaults in from_json; model fields shared with the
  // corpus follow the corpus unless given.
  nlohmann::json j = nlohmann::json::object();
  if (!o.config_path.empty()) {
    try {
      j = nlohmann::json::parse(kprobe::read_file(o.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw kprobe::ConfigError("cannot parse " + o.config_path + ": " + e.what());
    }
  }
  for (const auto& s : o.overrides) kprobe::apply_override(j, s);
  if (!o.out_dir.empty()) j["out_dir"] = o.out_dir;
  auto config = j.get<kprobe::PipelineConfig>();
  if (o.seed) config = kprobe::reseeded(config, *o.seed);
  config.validate();
  return config;
}

void print_grid(const kprobe::AccuracyGrid& g) {
  std::printf("%-22s", "method \\ fraction");
  for (double f : g.fractions) std::printf("%10s", kprobe::format_short(f).c_str());
  std::printf("\n");
  for (std::size_t m = 0; m < g.methods.size(); ++m) {
    std::printf("%-22s", std::string(kprobe::method_name(g.methods[m])).c_str());
    for (double v : g.cells[m]) std::printf("%10.4f", v);
    std::printf("\n");
  }
}

// Returns the process exit code.
int run(const kprobe::PipelineConfig& config, Stage stage) {
  const auto t0 = std::chrono::steady_clock::now();
  std::fprintf(stderr, "[kprobe] %s\n", std::string(kprobe::stage_name(stage)).c_str());
  int code = 0;
  switch (stage) {
    case Stage::Train: {
      const auto h = kprobe::run_train(config);
      std::printf("train: epoch %d loss %.4f train_acc %.4f\n", h.back().epoch, h.back().loss,
                  h.back().train_accuracy);
      break;
    }
    case Stage::Evaluate: {
      const auto g = kprobe::run_evaluate(config);
      print_grid(g);
      break;
    }
    case Stage::Check: {
      const auto r = kprobe::run_check(config);
      for (const auto& i : r.items)
        std::printf("%s %s\n", i.passed ? "PASS" : "FAIL", i.name.c_str());
      if (!r.passed()) code = kInvariant;
      break;
    }
    default:
      kprobe::run_stage(config, stage);
  }
  const double s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fprintf(stderr, "[kprobe] %s done in %.1f s\n",
               std::string(kprobe::stage_name(stage)).c_str(), s);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kprobe: knowledge-neuron probing for a small attention classifier"};
  app.require_subcommand(1);
  Options opts;
  bool print_config = false;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-corpus", "generate the synthetic motif corpus"},
      {"train", "train the classifier"},
      {"attribute", "score every Q/K/V neuron by activation and integrated gradients"},
      {"select", "build keep masks at each preservation fraction"},
      {"evaluate", "measure submodel test accuracy"},
      {"report", "write grid.csv, heatmaps and report.json"},
      {"check", "run the invariant suite"},
      {"all", "run every stage in order"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", opts.config_path, "JSON pipeline config")->check(CLI::ExistingFile);
    sub->add_option("--set", opts.overrides, "override a config value, e.g. train.epochs=10")
        ->take_all();
    sub->add_option("-o,--out-dir", opts.out_dir, "artifact directory");
    sub->add_option("-j,--threads", opts.threads, "worker threads (also KPROBE_THREADS)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", opts.seed, "derive every pipeline seed from this value");
    sub->add_flag("--print-config", print_config, "print the resolved config and exit");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (opts.threads > 0) kprobe::set_num_threads(opts.threads);
    const kprobe::PipelineConfig config = resolve(opts);
    if (print_config) {
      std::cout << nlohmann::json(config).dump(2) << "\n";
      return 0;
    }
    std::string chosen;
    for (auto* s : subs)
      if (s->parsed()) chosen = s->get_name();
    if (chosen == "all") {
      for (Stage st : {Stage::GenCorpus, Stage::Train, Stage::Attribute, Stage::Select,
                       Stage::Evaluate, Stage::Report, Stage::Check})
        if (const int rc = run(config, st); rc != 0) return rc;
      return 0;
    }
    for (Stage st : {Stage::GenCorpus, Stage::Train, Stage::Attribute, Stage::Select,
                     Stage::Evaluate, Stage::Report, Stage::Check})
      if (kprobe::stage_name(st) == chosen) return run(config, st);
    return kUsage;
  } catch (const kprobe::MissingArtifact& e) {
    std::fprintf(stderr, "kprobe: %s\n", e.what());
    return kMissing;
  } catch (const kprobe::NumericError& e) {
    std::fprintf(stderr, "kprobe: %s\n", e.what());
    return kInvariant;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "kprobe: %s\n", e.what());
    return kUsage;
  }
}

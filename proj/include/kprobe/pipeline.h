// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "kprobe/attribution.h"
#include "kprobe/corpus.h"
#include "kprobe/model.h"
#include "kprobe/report.h"
#include "kprobe/train.h"

namespace kprobe {

// Sizes and tolerances for the `check` invariant suite.
struct CheckConfig {
  std::size_t fd_samples = 100;
  double fd_epsilon = 1e-6;
  double fd_tolerance = 1e-4;
  std::size_t completeness_examples = 20;
  int joint_steps = 256;
  std::size_t per_weight_samples = 20;
  int per_weight_steps = 1024;
  double completeness_tolerance = 0.01;
  std::size_t ablation_inputs = 50;
  std::uint64_t seed = 17;

  friend bool operator==(const CheckConfig&, const CheckConfig&) = default;
};

void to_json(nlohmann::json& j, const CheckConfig& c);
void from_json(const nlohmann::json& j, CheckConfig& c);

struct PipelineConfig {
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig train;
  IGConfig ig;
  CheckConfig check;
  std::uint64_t init_seed = 3;
  std::uint64_t split_seed = 11;
  double train_fraction = 0.8;
  std::vector<double> fractions{0.5, 0.25, 0.1, 0.01};
  std::vector<std::uint64_t> random_seeds{1, 2, 3, 4, 5};
  std::size_t bin_size = 8;
  std::filesystem::path out_dir = "kprobe-out";

  // Also checks that the model's alphabet, class count and length match the
  // corpus.
  void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

// Applies "a.b.c=value" to `config`; value is parsed as JSON and falls back to
// a plain string.
void apply_override(nlohmann::json& config, std::string_view assignment);

// Sets the corpus, split, init and train seeds from one pipeline seed.
PipelineConfig reseeded(PipelineConfig config, std::uint64_t seed);

enum class Stage { GenCorpus, Train, Attribute, Select, Evaluate, Report, Check };

std::string_view stage_name(Stage stage);

// Artifact names inside out_dir.
namespace artifact {
inline constexpr std::string_view kConfig = "config.json";
inline constexpr std::string_view kCorpus = "corpus.json";
inline constexpr std::string_view kCheckpoint = "model.ckpt";
inline constexpr std::string_view kHistory = "history.csv";
inline constexpr std::string_view kActivationScores = "scores_activation";
inline constexpr std::string_view kIGScores = "scores_ig";
inline constexpr std::string_view kMaskDir = "masks";
inline constexpr std::string_view kEvaluation = "evaluation.json";
inline constexpr std::string_view kCheck = "check.json";
}  // namespace artifact

// "<method>_<fraction>" or "random_<fraction>_seed<seed>".
std::string mask_stem(SelectionMethod method, double fraction, std::uint64_t seed = 0);

struct Split {
  Dataset train, test;
};

// Each stage reads its inputs from config.out_dir and writes its outputs
// there. Missing inputs raise MissingArtifact.
void run_gen_corpus(const PipelineConfig& config);
TrainHistory run_train(const PipelineConfig& config);
void run_attribute(const PipelineConfig& config);
void run_select(const PipelineConfig& config);
AccuracyGrid run_evaluate(const PipelineConfig& config);
void run_report(const PipelineConfig& config);

struct CheckItem {
  std::string name;
  bool passed = false;
  nlohmann::ordered_json detail;
};

struct CheckResult {
  std::vector<CheckItem> items;
  bool passed() const;
};

CheckResult run_check(const PipelineConfig& config);
nlohmann::ordered_json check_json(const CheckResult& result);

void run_stage(const PipelineConfig& config, Stage stage);

// Loaders shared by stages.
Corpus load_corpus(const PipelineConfig& config);
Split load_split(const PipelineConfig& config);
Parameters load_model(const PipelineConfig& config);
ScoreTable load_scores(const PipelineConfig& config, SelectionMethod method);
NeuronMask load_mask(const PipelineConfig& config, SelectionMethod method, double fraction,
                     std::uint64_t seed = 0);

}  // namespace kprobe

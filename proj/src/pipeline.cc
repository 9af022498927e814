// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/pipeline.h"

#include <algorithm>
#include <bit>
#include <cmath>

#include "kprobe/ablation.h"
#include "kprobe/checkpoint.h"
#include "kprobe/errors.h"
#include "kprobe/grad.h"
#include "kprobe/io.h"
#include "kprobe/parallel.h"
#include "kprobe/random.h"

namespace kprobe {
namespace {

using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

constexpr SelectionMethod kScoredMethods[] = {SelectionMethod::Activation,
                                              SelectionMethod::IntegratedGradients};

std::filesystem::path in_out(const PipelineConfig& c, std::string_view name) {
  return c.out_dir / std::string(name);
}

std::string require(const PipelineConfig& c, std::string_view name, Stage producer) {
  const auto path = in_out(c, name);
  if (!std::filesystem::exists(path))
    throw MissingArtifact(path.string(), std::string(stage_name(producer)));
  return read_file(path);
}

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw IoError("malformed " + what + ": " + e.what());
  }
}

std::string scores_stem(SelectionMethod method) {
  return std::string(method == SelectionMethod::Activation ? artifact::kActivationScores
                                                           : artifact::kIGScores);
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }
std::string dump(const OJson& j) { return j.dump(2) + "\n"; }

void write_mask(const PipelineConfig& c, const NeuronMask& mask, const std::string& stem) {
  const auto dir = in_out(c, artifact::kMaskDir);
  write_file(dir / (stem + ".csv"), mask_csv(mask));
  write_file(dir / (stem + ".json"), dump(mask_metadata(mask)));
}

// Masks evaluated for one grid column, in grid row order.
struct ColumnMasks {
  std::vector<NeuronMask> random;
  NeuronMask activation, ig;
};

ColumnMasks column_masks(const PipelineConfig& c, double fraction) {
  ColumnMasks m;
  for (auto s : c.random_seeds) m.random.push_back(load_mask(c, SelectionMethod::Random, fraction, s));
  m.activation = load_mask(c, SelectionMethod::Activation, fraction);
  m.ig = load_mask(c, SelectionMethod::IntegratedGradients, fraction);
  return m;
}

std::vector<double> selected_fractions(const PipelineConfig& c) {
  std::vector<double> out;
  for (double f : grid_fractions(c.fractions))
    if (f != 1.0) out.push_back(f);
  return out;
}

CheckItem item(std::string name, bool passed, OJson detail) {
  return {std::move(name), passed, std::move(detail)};
}

TokenSequence random_tokens(Rng& rng, const ModelConfig& m) {
  TokenSequence t(static_cast<std::size_t>(m.seq_len));
  for (auto& x : t) x = static_cast<Token>(rng.below(static_cast<std::uint64_t>(m.alphabet_size)));
  return t;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

bool same_trace(const ForwardTrace& a, const ForwardTrace& b) {
  if (!same_bits(a.probabilities, b.probabilities) || a.layers.size() != b.layers.size())
    return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    for (Role r : kRoles)
      if (!same_bits(a.layers[l].role(r).flat(), b.layers[l].role(r).flat())) return false;
  return true;
}

std::vector<NeuronMask> all_masks(const PipelineConfig& c) {
  std::vector<NeuronMask> out;
  for (double f : selected_fractions(c)) {
    ColumnMasks m = column_masks(c, f);
    for (auto& r : m.random) out.push_back(std::move(r));
    out.push_back(std::move(m.activation));
    out.push_back(std::move(m.ig));
  }
  return out;
}

CheckItem check_gradient(const PipelineConfig& c, const Parameters& p, const Split& s) {
  const auto r = finite_diff_check(p, s.test.examples.front(), c.check.fd_samples,
                                   c.check.fd_epsilon, c.check.seed);
  return item("gradient_finite_difference", r.max_relative_error <= c.check.fd_tolerance,
              {{"samples", r.samples.size()},
               {"epsilon", c.check.fd_epsilon},
               {"max_relative_error", r.max_relative_error},
               {"tolerance", c.check.fd_tolerance}});
}

CheckItem check_class_sum(const Parameters& p, const Split& s) {
  LabeledSequence ex = s.test.examples.front();
  Vector total;
  for (int y = 0; y < p.config.num_classes; ++y) {
    ex.label = y;
    const auto g = grad_correct_prob(p, ex);
    if (total.empty()) total.assign(g.values.size(), 0.0);
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += g.values[i];
  }
  double worst = 0.0;
  for (double v : total) worst = std::max(worst, std::abs(v));
  return item("gradient_class_sum", worst <= 1e-10, {{"max_abs", worst}, {"tolerance", 1e-10}});
}

CheckItem check_joint_completeness(const PipelineConfig& c, const Parameters& p, const Split& s) {
  const std::size_t n = std::min(c.check.completeness_examples, s.test.size());
  IGConfig cfg;
  cfg.riemann_steps = c.check.joint_steps;
  cfg.rule = RiemannRule::Midpoint;
  const Parameters zero = scale_qkv(p, {0.0, std::nullopt});
  std::vector<double> residual(n), bound(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& ex = s.test.examples[i];
    const Vector ig = ig_joint(p, ex, cfg);
    double sum = 0.0;
    for (double v : ig) sum += v;
    const double delta = correct_class_prob(p, ex) - correct_class_prob(zero, ex);
    residual[i] = std::abs(sum - delta);
    bound[i] = std::max(c.check.completeness_tolerance * std::abs(delta), 1e-4);
  });
  bool ok = true;
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ok = ok && residual[i] <= bound[i];
    worst = std::max(worst, residual[i] / bound[i]);
  }
  return item("ig_completeness_joint", ok && n > 0,
              {{"examples", n}, {"steps", cfg.riemann_steps}, {"worst_residual_over_bound", worst}});
}

CheckItem check_per_weight_completeness(const PipelineConfig& c, const Parameters& p,
                                        const Split& s) {
  const auto& ex = s.test.examples.front();
  const auto weights =
      sample_qkv_weights(p.config.neuron_layout(), c.check.per_weight_samples, c.check.seed + 1);
  IGConfig cfg;
  cfg.riemann_steps = c.check.per_weight_steps;
  cfg.rule = RiemannRule::Midpoint;
  cfg.path_mode = PathMode::PerWeight;
  const double full = correct_class_prob(p, ex);
  std::vector<double> err(weights.size());
  parallel_for(weights.size(), [&](std::size_t i) {
    const double ig = ig_weight(p, ex, weights[i], cfg);
    const double delta = full - correct_class_prob(scale_qkv(p, {0.0, weights[i]}), ex);
    err[i] = relative_error(ig, delta);
  });
  const double worst = err.empty() ? 0.0 : *std::max_element(err.begin(), err.end());
  return item("ig_completeness_per_weight",
              !err.empty() && worst <= c.check.completeness_tolerance,
              {{"weights", weights.size()}, {"steps", cfg.riemann_steps}, {"max_relative_error", worst}});
}

CheckItem check_ablation(const PipelineConfig& c, const Parameters& p,
                         const std::vector<NeuronMask>& masks) {
  Rng rng(derive_seed(c.check.seed, 3));
  const NeuronMask keep_all = NeuronMask::all_keep(p.config.neuron_layout());
  std::size_t mismatches = 0, nonzero = 0, identity = 0;
  for (std::size_t i = 0; i < c.check.ablation_inputs; ++i) {
    const TokenSequence x = random_tokens(rng, p.config);
    const NeuronMask& mask = masks.empty() ? keep_all : masks[i % masks.size()];
    const ForwardTrace masked = forward(p, x, mask);
    if (!same_trace(masked, forward(apply_mask(p, mask), x))) ++mismatches;
    for (std::size_t n = 0; n < mask.keep.size(); ++n) {
      if (mask.keep[n]) continue;
      const NeuronId id = mask.layout.neuron(n);
      for (std::size_t t = 0; t < x.size(); ++t)
        if (std::bit_cast<std::uint64_t>(masked.activation(id, t)) != 0) ++nonzero;
    }
    if (!same_trace(forward(p, x, keep_all), forward(p, x)) || !(apply_mask(p, keep_all) == p))
      ++identity;
  }
  return item("ablation_exactness", mismatches == 0 && nonzero == 0 && identity == 0,
              {{"inputs", c.check.ablation_inputs},
               {"masked_vs_applied_mismatches", mismatches},
               {"nonzero_ablated_activations", nonzero},
               {"identity_failures", identity}});
}

CheckItem check_selection(const PipelineConfig& c, const Parameters& p) {
  const NeuronLayout layout = p.config.neuron_layout();
  const std::size_t n = layout.size();
  std::size_t bad_count = 0, bad_oracle = 0, bad_nesting = 0;
  auto fractions = selected_fractions(c);
  std::sort(fractions.begin(), fractions.end());
  for (SelectionMethod m : kScoredMethods) {
    const ScoreTable table = load_scores(c, m);
    std::vector<std::pair<double, std::size_t>> ranked(n);
    for (std::size_t i = 0; i < n; ++i) ranked[i] = {-table.scores[i], i};
    std::sort(ranked.begin(), ranked.end());
    const NeuronMask* prev = nullptr;
    std::vector<NeuronMask> masks;
    masks.reserve(fractions.size());
    for (double f : fractions) {
      masks.push_back(load_mask(c, m, f));
      const NeuronMask& mask = masks.back();
      const auto want = static_cast<std::size_t>(std::ceil(f * static_cast<double>(n) - 1e-9));
      if (mask.kept_count() != want) ++bad_count;
      std::vector<std::uint8_t> oracle(n, 0);
      for (std::size_t i = 0; i < want && i < n; ++i) oracle[ranked[i].second] = 1;
      if (oracle != mask.keep) ++bad_oracle;
      if (prev)
        for (std::size_t i = 0; i < n; ++i)
          if (prev->keep[i] && !mask.keep[i]) ++bad_nesting;
      prev = &mask;
    }
  }
  for (double f : fractions)
    for (auto s : c.random_seeds) {
      const auto want = static_cast<std::size_t>(std::ceil(f * static_cast<double>(n) - 1e-9));
      if (load_mask(c, SelectionMethod::Random, f, s).kept_count() != want) ++bad_count;
    }
  return item("selection_exactness", bad_count == 0 && bad_oracle == 0 && bad_nesting == 0,
              {{"count_mismatches", bad_count},
               {"oracle_mismatches", bad_oracle},
               {"nesting_violations", bad_nesting}});
}

CheckItem check_heatmaps(const PipelineConfig& c, const std::vector<NeuronMask>& masks) {
  std::size_t bad = 0;
  for (const auto& m : masks) {
    const double expected =
        static_cast<double>(m.kept_count()) / static_cast<double>(m.layout.size());
    if (heatmap(m, c.bin_size).weighted_mean() != expected) ++bad;
  }
  return item("heatmap_consistency", bad == 0,
              {{"masks", masks.size()}, {"bin_size", c.bin_size}, {"mismatches", bad}});
}

CheckItem check_determinism(const PipelineConfig& c, const Parameters& p, const Split& s) {
  OJson detail = OJson::object();
  bool ok = true;
  auto compare = [&](const std::string& what, const std::string& got, const std::string& want) {
    const bool same = got == want;
    detail[what] = same;
    ok = ok && same;
  };
  const CheckpointText ckpt = encode_checkpoint(p, std::string(artifact::kCheckpoint) + ".b64");
  compare("checkpoint", ckpt.manifest + ckpt.blob,
          require(c, artifact::kCheckpoint, Stage::Train) +
              require(c, std::string(artifact::kCheckpoint) + ".b64", Stage::Train));

  const int saved = num_threads();
  const int other = saved == 1 ? 3 : 1;
  const std::string act = scores_csv(activation_scores(p, s.test));
  set_num_threads(other);
  const std::string act_other = scores_csv(activation_scores(p, s.test));
  set_num_threads(saved);
  compare("activation_scores", act, require(c, scores_stem(SelectionMethod::Activation) + ".csv",
                                            Stage::Attribute));
  compare("activation_scores_thread_count", act_other, act);
  compare("ig_scores", scores_csv(ig_scores(p, s.test, c.ig)),
          require(c, scores_stem(SelectionMethod::IntegratedGradients) + ".csv", Stage::Attribute));

  const AccuracyGrid grid =
      build_grid(p, s.test, load_scores(c, SelectionMethod::Activation),
                 load_scores(c, SelectionMethod::IntegratedGradients), c.fractions, c.random_seeds);
  const Json eval = parse_json(require(c, artifact::kEvaluation, Stage::Evaluate), "evaluation");
  compare("evaluation_grid", grid_json(grid).dump(), grid_json(grid_from_json(eval.at("grid"))).dump());
  return item("determinism", ok, std::move(detail));
}

}  // namespace

void to_json(Json& j, const CheckConfig& c) {
  j = Json{{"fd_samples", c.fd_samples},
           {"fd_epsilon", c.fd_epsilon},
           {"fd_tolerance", c.fd_tolerance},
           {"completeness_examples", c.completeness_examples},
           {"joint_steps", c.joint_steps},
           {"per_weight_samples", c.per_weight_samples},
           {"per_weight_steps", c.per_weight_steps},
           {"completeness_tolerance", c.completeness_tolerance},
           {"ablation_inputs", c.ablation_inputs},
           {"seed", c.seed}};
}

void from_json(const Json& j, CheckConfig& c) {
  const CheckConfig d;
  c.fd_samples = j.value("fd_samples", d.fd_samples);
  c.fd_epsilon = j.value("fd_epsilon", d.fd_epsilon);
  c.fd_tolerance = j.value("fd_tolerance", d.fd_tolerance);
  c.completeness_examples = j.value("completeness_examples", d.completeness_examples);
  c.joint_steps = j.value("joint_steps", d.joint_steps);
  c.per_weight_samples = j.value("per_weight_samples", d.per_weight_samples);
  c.per_weight_steps = j.value("per_weight_steps", d.per_weight_steps);
  c.completeness_tolerance = j.value("completeness_tolerance", d.completeness_tolerance);
  c.ablation_inputs = j.value("ablation_inputs", d.ablation_inputs);
  c.seed = j.value("seed", d.seed);
}

void PipelineConfig::validate() const {
  corpus.validate();
  model.validate();
  train.validate();
  ig.validate();
  if (model.alphabet_size != corpus.alphabet_size || model.num_classes != corpus.num_classes ||
      model.seq_len != corpus.seq_len)
    throw ConfigError("model alphabet_size, num_classes and seq_len must match the corpus");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must lie in (0, 1)");
  if (fractions.empty()) throw ConfigError("fractions must not be empty");
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in (0, 1]");
  if (random_seeds.empty()) throw ConfigError("random_seeds must not be empty");
  if (bin_size < 1) throw ConfigError("bin_size must be >= 1");
  if (check.fd_samples == 0) throw ConfigError("check.fd_samples must be > 0");
  if (!(check.fd_epsilon > 0.0)) throw ConfigError("check.fd_epsilon must be > 0");
  if (check.joint_steps < 1 || check.per_weight_steps < 1)
    throw ConfigError("check step counts must be >= 1");
}

void to_json(Json& j, const PipelineConfig& c) {
  j = Json{{"corpus", c.corpus},
           {"model", c.model},
           {"train", c.train},
           {"ig", c.ig},
           {"check", c.check},
           {"init_seed", c.init_seed},
           {"split_seed", c.split_seed},
           {"train_fraction", c.train_fraction},
           {"fractions", c.fractions},
           {"random_seeds", c.random_seeds},
           {"bin_size", c.bin_size},
           {"out_dir", c.out_dir.string()}};
}

void from_json(const Json& j, PipelineConfig& c) {
  const PipelineConfig d;
  try {
    c.corpus = j.value("corpus", Json::object()).get<CorpusConfig>();
    // The model's vocabulary, classes and length follow the corpus unless given.
    Json model = j.value("model", Json::object());
    if (!model.contains("alphabet_size")) model["alphabet_size"] = c.corpus.alphabet_size;
    if (!model.contains("num_classes")) model["num_classes"] = c.corpus.num_classes;
    if (!model.contains("seq_len")) model["seq_len"] = c.corpus.seq_len;
    c.model = model.get<ModelConfig>();
    c.train = j.value("train", Json::object()).get<TrainConfig>();
    c.ig = j.value("ig", Json::object()).get<IGConfig>();
    c.check = j.value("check", Json::object()).get<CheckConfig>();
    c.init_seed = j.value("init_seed", d.init_seed);
    c.split_seed = j.value("split_seed", d.split_seed);
    c.train_fraction = j.value("train_fraction", d.train_fraction);
    c.fractions = j.value("fractions", d.fractions);
    c.random_seeds = j.value("random_seeds", d.random_seeds);
    c.bin_size = j.value("bin_size", d.bin_size);
    c.out_dir = j.value("out_dir", d.out_dir.string());
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad pipeline config: ") + e.what());
  }
}

void apply_override(Json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override must look like key.path=value, got '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::exception&) {
    value = text;
  }
  Json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("empty segment in override key '" + key + "'");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

PipelineConfig reseeded(PipelineConfig config, std::uint64_t seed) {
  config.corpus.seed = derive_seed(seed, 101);
  config.split_seed = derive_seed(seed, 102);
  config.init_seed = derive_seed(seed, 103);
  config.train.seed = derive_seed(seed, 104);
  return config;
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::GenCorpus: return "gen-corpus";
    case Stage::Train: return "train";
    case Stage::Attribute: return "attribute";
    case Stage::Select: return "select";
    case Stage::Evaluate: return "evaluate";
    case Stage::Report: return "report";
    case Stage::Check: return "check";
  }
  return "?";
}

std::string mask_stem(SelectionMethod method, double fraction, std::uint64_t seed) {
  std::string s = std::string(method_name(method)) + "_" + format_short(fraction);
  if (method == SelectionMethod::Random) s += "_seed" + std::to_string(seed);
  return s;
}

bool CheckResult::passed() const {
  return !items.empty() &&
         std::all_of(items.begin(), items.end(), [](const CheckItem& i) { return i.passed; });
}

OJson check_json(const CheckResult& result) {
  OJson items = OJson::array();
  for (const auto& i : result.items)
    items.push_back({{"name", i.name}, {"passed", i.passed}, {"detail", i.detail}});
  return {{"passed", result.passed()}, {"checks", std::move(items)}};
}

Corpus load_corpus(const PipelineConfig& c) {
  Corpus corpus = corpus_from_json(
      parse_json(require(c, artifact::kCorpus, Stage::GenCorpus), std::string(artifact::kCorpus)));
  if (!(corpus.config == c.corpus))
    throw ConfigError(std::string(artifact::kCorpus) +
                      " was generated from a different corpus config; rerun gen-corpus");
  return corpus;
}

Split load_split(const PipelineConfig& c) {
  auto [train, test] = split(load_corpus(c).dataset, c.train_fraction, c.split_seed);
  return {std::move(train), std::move(test)};
}

Parameters load_model(const PipelineConfig& c) {
  const auto path = in_out(c, artifact::kCheckpoint);
  if (!std::filesystem::exists(path))
    throw MissingArtifact(path.string(), std::string(stage_name(Stage::Train)));
  Parameters p = load_checkpoint(path);
  if (!(p.config == c.model))
    throw ConfigError(path.string() + " was trained with a different model config; rerun train");
  return p;
}

ScoreTable load_scores(const PipelineConfig& c, SelectionMethod method) {
  const std::string stem = scores_stem(method);
  const std::string csv = require(c, stem + ".csv", Stage::Attribute);
  const Json meta = parse_json(require(c, stem + ".json", Stage::Attribute), stem + ".json");
  return parse_scores(csv, meta);
}

NeuronMask load_mask(const PipelineConfig& c, SelectionMethod method, double fraction,
                     std::uint64_t seed) {
  const std::string stem = std::string(artifact::kMaskDir) + "/" + mask_stem(method, fraction, seed);
  const std::string csv = require(c, stem + ".csv", Stage::Select);
  const Json meta = parse_json(require(c, stem + ".json", Stage::Select), stem + ".json");
  return parse_mask(csv, meta);
}

void run_gen_corpus(const PipelineConfig& c) {
  Json resolved = c;
  resolved.erase("out_dir");
  write_file(in_out(c, artifact::kConfig), dump(resolved));
  write_file(in_out(c, artifact::kCorpus), corpus_to_json(generate_corpus(c.corpus)).dump() + "\n");
}

TrainHistory run_train(const PipelineConfig& c) {
  const Split s = load_split(c);
  TrainResult r = train(init_params(c.model, c.init_seed), s.train, c.train);
  save_checkpoint(r.params, in_out(c, artifact::kCheckpoint));
  write_file(in_out(c, artifact::kHistory), history_csv(r.history));
  return r.history;
}

void run_attribute(const PipelineConfig& c) {
  const Parameters p = load_model(c);
  const Split s = load_split(c);
  for (const ScoreTable& t : {activation_scores(p, s.test), ig_scores(p, s.test, c.ig)}) {
    const std::string stem = scores_stem(t.method);
    write_file(in_out(c, stem + ".csv"), scores_csv(t));
    write_file(in_out(c, stem + ".json"), dump(scores_metadata(t)));
  }
}

void run_select(const PipelineConfig& c) {
  const ScoreTable act = load_scores(c, SelectionMethod::Activation);
  const ScoreTable ig = load_scores(c, SelectionMethod::IntegratedGradients);
  if (act.layout != c.model.neuron_layout() || ig.layout != c.model.neuron_layout())
    throw ConfigError("score tables do not match the model; rerun attribute");
  std::filesystem::remove_all(in_out(c, artifact::kMaskDir));
  for (double f : selected_fractions(c)) {
    for (auto s : c.random_seeds)
      write_mask(c, select_random(act.layout, f, s), mask_stem(SelectionMethod::Random, f, s));
    write_mask(c, select_by_score(act, f), mask_stem(SelectionMethod::Activation, f));
    write_mask(c, select_by_score(ig, f), mask_stem(SelectionMethod::IntegratedGradients, f));
  }
}

AccuracyGrid run_evaluate(const PipelineConfig& c) {
  const Parameters p = load_model(c);
  const Split s = load_split(c);
  AccuracyGrid grid;
  grid.methods = {SelectionMethod::Random, SelectionMethod::Activation,
                  SelectionMethod::IntegratedGradients};
  grid.fractions = grid_fractions(c.fractions);
  grid.random_seeds = c.random_seeds;
  grid.cells.assign(3, std::vector<double>(grid.fractions.size(), 0.0));
  grid.random_per_seed.assign(grid.fractions.size(), {});
  const double full = accuracy(p, s.test);
  for (std::size_t f = 0; f < grid.fractions.size(); ++f) {
    if (grid.fractions[f] == 1.0) {
      for (auto& row : grid.cells) row[f] = full;
      grid.random_per_seed[f].assign(c.random_seeds.size(), full);
      continue;
    }
    const ColumnMasks m = column_masks(c, grid.fractions[f]);
    double sum = 0.0;
    for (const auto& mask : m.random) {
      const double a = accuracy(p, s.test, mask);
      grid.random_per_seed[f].push_back(a);
      sum += a;
    }
    grid.cells[0][f] = sum / static_cast<double>(m.random.size());
    grid.cells[1][f] = accuracy(p, s.test, m.activation);
    grid.cells[2][f] = accuracy(p, s.test, m.ig);
  }
  const OJson out = {{"full_accuracy", full},
                     {"test_examples", s.test.size()},
                     {"dataset_id", s.test.fingerprint()},
                     {"grid", grid_json(grid)}};
  write_file(in_out(c, artifact::kEvaluation), dump(out));
  return grid;
}

void run_report(const PipelineConfig& c) {
  const Json eval = parse_json(require(c, artifact::kEvaluation, Stage::Evaluate),
                               std::string(artifact::kEvaluation));
  ReportBundle bundle;
  bundle.grid = grid_from_json(eval.at("grid"));
  for (SelectionMethod m : bundle.grid.methods)
    for (double f : selected_fractions(c)) {
      // Random heatmaps show the first replicate.
      const NeuronMask mask = load_mask(c, m, f, c.random_seeds.front());
      bundle.heatmaps.push_back({m, f, heatmap(mask, c.bin_size)});
    }
  emit(bundle, c.out_dir);
}

CheckResult run_check(const PipelineConfig& c) {
  const Parameters p = load_model(c);
  const Split s = load_split(c);
  if (s.test.empty()) throw ConfigError("check needs a nonempty test split");
  const std::vector<NeuronMask> masks = all_masks(c);
  CheckResult r;
  r.items.push_back(check_gradient(c, p, s));
  r.items.push_back(check_class_sum(p, s));
  r.items.push_back(check_joint_completeness(c, p, s));
  r.items.push_back(check_per_weight_completeness(c, p, s));
  r.items.push_back(check_ablation(c, p, masks));
  r.items.push_back(check_selection(c, p));
  r.items.push_back(check_heatmaps(c, masks));
  r.items.push_back(check_determinism(c, p, s));
  write_file(in_out(c, artifact::kCheck), dump(check_json(r)));
  return r;
}

void run_stage(const PipelineConfig& c, Stage stage) {
  switch (stage) {
    case Stage::GenCorpus: run_gen_corpus(c); break;
    case Stage::Train: run_train(c); break;
    case Stage::Attribute: run_attribute(c); break;
    case Stage::Select: run_select(c); break;
    case Stage::Evaluate: run_evaluate(c); break;
    case Stage::Report: run_report(c); break;
    case Stage::Check: run_check(c); break;
  }
}

}  // namespace kprobe

// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/attribution.h"

#include <cmath>
#include <map>

#include "kprobe/errors.h"
#include "kprobe/io.h"
#include "kprobe/parallel.h"
#include "network.h"

namespace kprobe {
namespace {

void require_examples(const Dataset& ds) {
  if (ds.empty()) throw ConfigError("attribution needs a nonempty dataset");
}

// Mean over examples of per-example neuron scores, reduced in example order.
Vector mean_in_order(const std::vector<Vector>& per_example, std::size_t n_neurons) {
  Vector out(n_neurons, 0.0);
  for (const auto& s : per_example)
    for (std::size_t i = 0; i < n_neurons; ++i) out[i] += s[i];
  for (double& v : out) v /= static_cast<double>(per_example.size());
  return out;
}

}  // namespace

std::string_view rule_name(RiemannRule rule) {
  return rule == RiemannRule::Left ? "left" : "midpoint";
}

std::string_view path_mode_name(PathMode mode) {
  return mode == PathMode::Joint ? "joint" : "per_weight";
}

void IGConfig::validate() const {
  if (riemann_steps < 1) throw ConfigError("riemann_steps must be >= 1");
}

double IGConfig::alpha(int k) const {
  const double m = riemann_steps;
  return rule == RiemannRule::Left ? k / m : (k + 0.5) / m;
}

void to_json(nlohmann::json& j, const IGConfig& c) {
  j = nlohmann::json{{"riemann_steps", c.riemann_steps},
                     {"rule", rule_name(c.rule)},
                     {"path_mode", path_mode_name(c.path_mode)}};
}

void from_json(const nlohmann::json& j, IGConfig& c) {
  const IGConfig d;
  c.riemann_steps = j.value("riemann_steps", d.riemann_steps);
  const auto rule = j.value("rule", std::string(rule_name(d.rule)));
  if (rule == "left") c.rule = RiemannRule::Left;
  else if (rule == "midpoint") c.rule = RiemannRule::Midpoint;
  else throw ConfigError("unknown Riemann rule '" + rule + "'");
  const auto mode = j.value("path_mode", std::string(path_mode_name(d.path_mode)));
  if (mode == "joint") c.path_mode = PathMode::Joint;
  else if (mode == "per_weight") c.path_mode = PathMode::PerWeight;
  else throw ConfigError("unknown path_mode '" + mode + "'");
}

ScoreTable activation_scores(const Parameters& params, const Dataset& test_set) {
  require_examples(test_set);
  const NeuronLayout layout = params.config.neuron_layout();
  std::vector<Vector> per_example(test_set.size());
  parallel_for(test_set.size(), [&](std::size_t e) {
    detail::ForwardCache cache;
    detail::run_forward(params, test_set.examples[e].tokens, nullptr, cache);
    Vector s(layout.size(), 0.0);
    const auto d = static_cast<std::size_t>(layout.width);
    for (std::size_t l = 0; l < cache.layers.size(); ++l) {
      const auto& lc = cache.layers[l];
      for (Role role : kRoles) {
        const Matrix& act = role == Role::Query ? lc.query : role == Role::Key ? lc.key : lc.value;
        const std::size_t base = layout.index({static_cast<int>(l), role, 0});
        for (std::size_t t = 0; t < act.rows(); ++t)
          for (std::size_t u = 0; u < d; ++u) s[base + u] += std::abs(act(t, u));
        for (std::size_t u = 0; u < d; ++u) s[base + u] /= static_cast<double>(act.rows());
      }
    }
    per_example[e] = std::move(s);
  });

  ScoreTable table;
  table.method = SelectionMethod::Activation;
  table.layout = layout;
  table.scores = mean_in_order(per_example, layout.size());
  table.dataset_id = test_set.fingerprint();
  table.num_examples = test_set.size();
  return table;
}

double ig_weight(const Parameters& params, const LabeledSequence& example, const WeightRef& weight,
                 const IGConfig& cfg) {
  cfg.validate();
  const double trained = qkv_value(params, weight);
  if (trained == 0.0) return 0.0;
  double sum = 0.0;
  for (int k = 0; k < cfg.riemann_steps; ++k)
    sum += grad_correct_prob(params, example, {cfg.alpha(k), weight}).at(weight);
  return trained * (sum / cfg.riemann_steps);
}

Vector ig_joint(const Parameters& params, const LabeledSequence& example, const IGConfig& cfg) {
  cfg.validate();
  const Vector trained = qkv_values(params);
  Vector sum(trained.size(), 0.0);
  for (int k = 0; k < cfg.riemann_steps; ++k) {
    const QKVGradient g = grad_correct_prob(params, example, {cfg.alpha(k), std::nullopt});
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g.values[i];
  }
  Vector ig(trained.size());
  for (std::size_t i = 0; i < ig.size(); ++i) ig[i] = trained[i] * (sum[i] / cfg.riemann_steps);
  return ig;
}

ScoreTable ig_scores(const Parameters& params, const Dataset& test_set, const IGConfig& cfg,
                     std::span<const WeightRef> sample) {
  cfg.validate();
  require_examples(test_set);
  const NeuronLayout layout = params.config.neuron_layout();
  const QKVIndex index(layout);
  if (cfg.path_mode == PathMode::PerWeight && sample.empty())
    throw ConfigError(
        "per_weight integrated gradients over all " + std::to_string(index.size()) +
        " Q/K/V parameters would need " + std::to_string(index.size()) + " x " +
        std::to_string(cfg.riemann_steps) +
        " gradient evaluations per example; pass an explicit weight sample or use path_mode=joint");

  std::vector<Vector> per_example(test_set.size());
  if (cfg.path_mode == PathMode::Joint) {
    const double inv = 1.0 / static_cast<double>(index.per_neuron());
    parallel_for(test_set.size(), [&](std::size_t e) {
      const Vector ig = ig_joint(params, test_set.examples[e], cfg);
      Vector s(layout.size(), 0.0);
      for (std::size_t n = 0; n < layout.size(); ++n) {
        double acc = 0.0;
        for (std::size_t k = 0; k < index.per_neuron(); ++k)
          acc += std::abs(ig[n * index.per_neuron() + k]);
        s[n] = acc * inv;
      }
      per_example[e] = std::move(s);
    });
  } else {
    // Sampled parameters grouped by neuron, in canonical parameter order.
    std::map<std::size_t, std::vector<WeightRef>> by_neuron;
    for (const auto& w : sample) {
      qkv_value(params, w);  // range check
      by_neuron[layout.index(w.neuron)].push_back(w);
    }
    for (auto& [n, ws] : by_neuron) std::sort(ws.begin(), ws.end());
    parallel_for(test_set.size(), [&](std::size_t e) {
      Vector s(layout.size(), 0.0);
      for (const auto& [n, ws] : by_neuron) {
        double acc = 0.0;
        for (const auto& w : ws) acc += std::abs(ig_weight(params, test_set.examples[e], w, cfg));
        s[n] = acc / static_cast<double>(ws.size());
      }
      per_example[e] = std::move(s);
    });
  }

  ScoreTable table;
  table.method = SelectionMethod::IntegratedGradients;
  table.layout = layout;
  table.scores = mean_in_order(per_example, layout.size());
  table.dataset_id = test_set.fingerprint();
  table.num_examples = test_set.size();
  table.ig = cfg;
  return table;
}

std::string scores_csv(const ScoreTable& table) {
  std::string out = "layer,role,unit,score\n";
  for (std::size_t i = 0; i < table.scores.size(); ++i) {
    const NeuronId n = table.layout.neuron(i);
    out += std::to_string(n.layer) + "," + std::string(role_name(n.role)) + "," +
           std::to_string(n.unit) + "," + format_double(table.scores[i]) + "\n";
  }
  return out;
}

nlohmann::json scores_metadata(const ScoreTable& table) {
  nlohmann::json j = {{"method", method_name(table.method)},
                      {"num_layers", table.layout.num_layers},
                      {"width", table.layout.width},
                      {"num_neurons", table.layout.size()},
                      {"dataset_id", table.dataset_id},
                      {"num_examples", table.num_examples},
                      {"aggregation", table.ig ? "mean_abs_ig_over_weights_and_bias"
                                               : "mean_abs_activation_over_positions"}};
  if (table.ig) {
    j["riemann_steps"] = table.ig->riemann_steps;
    j["rule"] = rule_name(table.ig->rule);
    j["path_mode"] = path_mode_name(table.ig->path_mode);
  }
  return j;
}

ScoreTable parse_scores(std::string_view csv, const nlohmann::json& metadata) {
  ScoreTable table;
  try {
    table.method = method_from_name(metadata.at("method").get<std::string>());
    table.layout = {metadata.at("num_layers").get<int>(), metadata.at("width").get<int>()};
    table.dataset_id = metadata.at("dataset_id").get<std::string>();
    table.num_examples = metadata.at("num_examples").get<std::size_t>();
    if (metadata.contains("riemann_steps")) table.ig = metadata.get<IGConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed score metadata: ") + e.what());
  }
  const auto lines = split_lines(csv);
  if (lines.empty() || lines[0] != "layer,role,unit,score") throw IoError("bad score CSV header");
  table.scores.assign(table.layout.size(), std::nan(""));
  std::vector<char> seen(table.layout.size(), 0);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 4) throw IoError("bad score CSV row: " + lines[i]);
    const NeuronId n{std::stoi(f[0]), role_from_name(f[1]), std::stoi(f[2])};
    if (!table.layout.contains(n)) throw IoError("score CSV neuron out of range: " + lines[i]);
    const auto idx = table.layout.index(n);
    if (seen[idx]) throw IoError("duplicate neuron in score CSV: " + lines[i]);
    seen[idx] = 1;
    table.scores[idx] = std::stod(f[3]);
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw IoError("score CSV does not cover every neuron");
  return table;
}

}  // namespace kprobe

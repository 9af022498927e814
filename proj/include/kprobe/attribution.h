// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "json.hpp"
#include "kprobe/corpus.h"
#include "kprobe/grad.h"
#include "kprobe/model.h"
#include "kprobe/neuron.h"

namespace kprobe {

enum class RiemannRule { Left, Midpoint };
enum class PathMode { Joint, PerWeight };

std::string_view rule_name(RiemannRule rule);
std::string_view path_mode_name(PathMode mode);

struct IGConfig {
  int riemann_steps = 32;
  RiemannRule rule = RiemannRule::Midpoint;
  PathMode path_mode = PathMode::Joint;

  void validate() const;
  // Path position of step k in [0, riemann_steps): k/m (left) or (k+1/2)/m.
  double alpha(int k) const;

  friend bool operator==(const IGConfig&, const IGConfig&) = default;
};

void to_json(nlohmann::json& j, const IGConfig& c);
void from_json(const nlohmann::json& j, IGConfig& c);

// One nonnegative importance score per neuron, canonical order.
struct ScoreTable {
  SelectionMethod method = SelectionMethod::Activation;
  NeuronLayout layout;
  Vector scores;
  std::string dataset_id;
  std::size_t num_examples = 0;
  std::optional<IGConfig> ig;  // integrated-gradients tables only

  double score(const NeuronId& n) const { return scores[layout.index(n)]; }
  friend bool operator==(const ScoreTable&, const ScoreTable&) = default;
};

// score(n) = mean over examples and positions of |activation of n|.
ScoreTable activation_scores(const Parameters& params, const Dataset& test_set);

// Integrated gradient of one parameter on its own path: w * (1/m) sum_k
// dP/dw evaluated with only that parameter scaled to alpha_k * w.
double ig_weight(const Parameters& params, const LabeledSequence& example, const WeightRef& weight,
                 const IGConfig& cfg);

// Integrated gradients for every Q/K/V parameter with all of them scaled
// together along one path (QKVIndex order). Sums to approximately
// P(trained) - P(all Q/K/V zeroed).
Vector ig_joint(const Parameters& params, const LabeledSequence& example, const IGConfig& cfg);

// Per-neuron score = mean over examples of the mean |IG| over the neuron's
// d weights and bias. PerWeight mode integrates each parameter separately and
// only over `sample`; neurons without sampled parameters score 0. PerWeight
// without a sample is rejected: it would cost N * (d + 1) * m gradients per
// example.
ScoreTable ig_scores(const Parameters& params, const Dataset& test_set, const IGConfig& cfg,
                     std::span<const WeightRef> sample = {});

// CSV body layer,role,unit,score with 17 significant digits.
std::string scores_csv(const ScoreTable& table);
nlohmann::json scores_metadata(const ScoreTable& table);
ScoreTable parse_scores(std::string_view csv, const nlohmann::json& metadata);

}  // namespace kprobe

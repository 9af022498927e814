// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "kprobe/corpus.h"
#include "kprobe/model.h"
#include "kprobe/neuron.h"

namespace kprobe {

// One scalar Q/K/V parameter: column `input` of the neuron's incoming row,
// or its bias when input == kBias.
struct WeightRef {
  static constexpr int kBias = -1;

  NeuronId neuron;
  int input = kBias;

  bool is_bias() const { return input == kBias; }
  friend auto operator<=>(const WeightRef&, const WeightRef&) = default;
};

// Every Q/K/V parameter in a flat canonical order: neuron by neuron, each
// neuron's d incoming weights followed by its bias.
class QKVIndex {
 public:
  explicit QKVIndex(NeuronLayout layout) : layout_(layout) {}

  const NeuronLayout& layout() const { return layout_; }
  std::size_t per_neuron() const { return static_cast<std::size_t>(layout_.width) + 1; }
  std::size_t size() const { return layout_.size() * per_neuron(); }

  std::size_t flat(const WeightRef& w) const {
    return layout_.index(w.neuron) * per_neuron() +
           (w.is_bias() ? static_cast<std::size_t>(layout_.width) : static_cast<std::size_t>(w.input));
  }
  WeightRef ref(std::size_t flat) const {
    const std::size_t slot = flat % per_neuron();
    return {layout_.neuron(flat / per_neuron()),
            slot == static_cast<std::size_t>(layout_.width) ? WeightRef::kBias : static_cast<int>(slot)};
  }

 private:
  NeuronLayout layout_;
};

// d p(label) / d w for every Q/K/V parameter, flat in QKVIndex order.
struct QKVGradient {
  NeuronLayout layout;
  Vector values;

  double at(const WeightRef& w) const { return values[QKVIndex(layout).flat(w)]; }
};

// Q/K/V parameter values, flat in QKVIndex order.
Vector qkv_values(const Parameters& params);
double& qkv_value(Parameters& params, const WeightRef& w);
double qkv_value(const Parameters& params, const WeightRef& w);

// Where along the integration path a gradient is taken. alpha scales every
// Q/K/V parameter, or only `only` when set; everything else stays as trained.
struct AlphaContext {
  double alpha = 1.0;
  std::optional<WeightRef> only;
};

Parameters scale_qkv(const Parameters& params, const AlphaContext& ctx);

// Exact reverse-mode gradient of p(label | x) with respect to all Q/K/V
// parameters, evaluated at the parameter point described by `ctx`.
QKVGradient grad_correct_prob(const Parameters& params, const LabeledSequence& example,
                              const AlphaContext& ctx = {});

// `count` distinct Q/K/V parameters sampled uniformly without replacement.
std::vector<WeightRef> sample_qkv_weights(NeuronLayout layout, std::size_t count,
                                          std::uint64_t seed);

struct FiniteDiffSample {
  WeightRef weight;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::vector<FiniteDiffSample> samples;
};

// Correct-class probability from a separate, unoptimized forward pass in
// extended precision. Used as the finite-difference oracle so that rounding
// noise in the difference quotient stays far below the checked tolerance.
long double reference_correct_prob(const Parameters& params, const LabeledSequence& example);

// |a - f| / max(|a|, |f|, 1e-8).
double relative_error(double a, double f);

// Compares grad_correct_prob against central differences
// (P(w + eps) - P(w - eps)) / (2 eps) on `sample_size` sampled parameters,
// with P from reference_correct_prob.
FiniteDiffReport finite_diff_check(const Parameters& params, const LabeledSequence& example,
                                   std::size_t sample_size, double epsilon, std::uint64_t seed);

}  // namespace kprobe

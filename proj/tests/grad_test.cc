// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/grad.h"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fixtures.h"
#include "kprobe/ablation.h"
#include "kprobe/errors.h"

namespace kprobe {
namespace {

using testing::generic_params;
using testing::random_example;
using testing::tiny_model;

// Central difference of the extended-precision reference forward.
double reference_slope(Parameters p, const LabeledSequence& ex, const WeightRef& w, double eps) {
  double& slot = qkv_value(p, w);
  const double x = slot;
  slot = x + eps;
  const long double hi = reference_correct_prob(p, ex);
  slot = x - eps;
  const long double lo = reference_correct_prob(p, ex);
  return static_cast<double>((hi - lo) / static_cast<long double>(2 * eps));
}

TEST(QKVIndex, FlatLayoutRoundTrips) {
  const QKVIndex index({2, 8});
  EXPECT_EQ(index.size(), 2u * 3u * 8u * 9u);
  for (std::size_t i = 0; i < index.size(); ++i) ASSERT_EQ(index.flat(index.ref(i)), i);
  EXPECT_EQ(index.flat({{0, Role::Query, 0}, WeightRef::kBias}), 8u);
  EXPECT_EQ(index.flat({{0, Role::Key, 1}, 2}), 8u * 9u + 9u + 2u);
}

TEST(QKVValues, MatchParameterTensors) {
  const Parameters p = generic_params(tiny_model(), 2);
  const Vector flat = qkv_values(p);
  const QKVIndex index(p.config.neuron_layout());
  for (std::size_t i = 0; i < flat.size(); ++i) ASSERT_EQ(flat[i], qkv_value(p, index.ref(i)));
  EXPECT_THROW(qkv_value(p, {{0, Role::Query, 8}, 0}), ConfigError);
  EXPECT_THROW(qkv_value(p, {{0, Role::Query, 0}, 8}), ConfigError);
}

TEST(Gradient, MatchesFiniteDifferencesAtSeveralPoints) {
  Rng rng(3);
  for (bool ln : {true, false}) {
    const ModelConfig m = tiny_model(ln);
    const Parameters base = generic_params(m, 4);
    for (double alpha : {1.0, 0.5, 0.1}) {
      const Parameters p = scale_qkv(base, {alpha, std::nullopt});
      const auto r = finite_diff_check(p, random_example(rng, m), 100, 1e-6, 7);
      EXPECT_EQ(r.samples.size(), 100u);
      EXPECT_LE(r.max_relative_error, 1e-4) << "ln=" << ln << " alpha=" << alpha;
    }
  }
}

TEST(Gradient, ScaledContextIsGradientAtScaledPoint) {
  const ModelConfig m = tiny_model();
  const Parameters p = generic_params(m, 9);
  Rng rng(1);
  const LabeledSequence ex = random_example(rng, m);
  EXPECT_EQ(grad_correct_prob(p, ex, {0.3, std::nullopt}).values,
            grad_correct_prob(scale_qkv(p, {0.3, std::nullopt}), ex).values);
  const WeightRef w{{1, Role::Value, 2}, 5};
  const Parameters one = scale_qkv(p, {0.25, w});
  EXPECT_EQ(qkv_value(one, w), 0.25 * qkv_value(p, w));
  EXPECT_EQ(grad_correct_prob(p, ex, {0.25, w}).values, grad_correct_prob(one, ex).values);
}

TEST(Gradient, SumOverClassesVanishes) {
  const ModelConfig m = tiny_model();
  const Parameters p = generic_params(m, 10);
  Rng rng(2);
  LabeledSequence ex = random_example(rng, m);
  Vector total;
  for (int y = 0; y < m.num_classes; ++y) {
    ex.label = y;
    const auto g = grad_correct_prob(p, ex).values;
    if (total.empty()) total.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) total[i] += g[i];
  }
  for (double v : total) ASSERT_LE(std::abs(v), 1e-10);
}

// Softmax over keys ignores a per-query shift, so key biases have zero
// gradient.
TEST(Gradient, KeyBiasGradientIsNegligible) {
  const ModelConfig m = tiny_model();
  const Parameters p = generic_params(m, 11);
  Rng rng(3);
  const auto g = grad_correct_prob(p, random_example(rng, m));
  for (int l = 0; l < m.num_layers; ++l)
    for (int u = 0; u < m.embed_dim; ++u)
      ASSERT_LE(std::abs(g.at({{l, Role::Key, u}, WeightRef::kBias})), 1e-15);
}

// A value unit whose output-projection column is zero cannot reach the
// logits.
TEST(Gradient, DeadPathIsExactlyZero) {
  ModelConfig m = tiny_model(false);
  m.num_layers = 1;
  Parameters p = generic_params(m, 12);
  const std::size_t unit = 3;
  for (std::size_t r = 0; r < p.layers[0].output.rows(); ++r) p.layers[0].output(r, unit) = 0.0;
  Rng rng(4);
  const auto g = grad_correct_prob(p, random_example(rng, m));
  for (int in = WeightRef::kBias; in < m.embed_dim; ++in)
    EXPECT_EQ(g.at({{0, Role::Value, static_cast<int>(unit)}, in}), 0.0);
  EXPECT_NE(g.at({{0, Role::Value, static_cast<int>(unit) + 1}, 0}), 0.0);
}

// No gradient masking: the zeroed row of an ablated neuron still gets its
// true local derivative.
TEST(Gradient, AblatedRowsKeepTheirLocalDerivative) {
  const ModelConfig m = tiny_model();
  NeuronMask mask = NeuronMask::all_keep(m.neuron_layout());
  const NeuronId dead{0, Role::Value, 1};
  mask.keep[mask.layout.index(dead)] = 0;
  const Parameters p = apply_mask(generic_params(m, 13), mask);
  Rng rng(5);
  const LabeledSequence ex = random_example(rng, m);
  const auto g = grad_correct_prob(p, ex);
  bool any_nonzero = false;
  for (int in = WeightRef::kBias; in < m.embed_dim; ++in) {
    const WeightRef w{dead, in};
    const double fd = reference_slope(p, ex, w, 1e-6);
    EXPECT_LE(relative_error(g.at(w), fd), 1e-4);
    any_nonzero = any_nonzero || g.at(w) != 0.0;
  }
  EXPECT_TRUE(any_nonzero);
}

TEST(FiniteDiff, RejectsEmptySampleAndBadEpsilon) {
  const ModelConfig m = tiny_model();
  const Parameters p = generic_params(m, 1);
  Rng rng(1);
  const LabeledSequence ex = random_example(rng, m);
  EXPECT_THROW(finite_diff_check(p, ex, 0, 1e-6, 1), ConfigError);
  EXPECT_THROW(finite_diff_check(p, ex, 10, 0.0, 1), ConfigError);
  EXPECT_THROW(finite_diff_check(p, ex, 10, -1e-6, 1), ConfigError);
}

TEST(FiniteDiff, DeterministicPerSeed) {
  const ModelConfig m = tiny_model();
  const Parameters p = generic_params(m, 1);
  Rng rng(1);
  const LabeledSequence ex = random_example(rng, m);
  const auto a = finite_diff_check(p, ex, 30, 1e-6, 4);
  const auto b = finite_diff_check(p, ex, 30, 1e-6, 4);
  EXPECT_EQ(a.max_relative_error, b.max_relative_error);
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i].weight, b.samples[i].weight);
}

TEST(Sample, DistinctAndInRange) {
  const NeuronLayout layout{2, 8};
  const auto s = sample_qkv_weights(layout, 200, 3);
  std::set<WeightRef> seen(s.begin(), s.end());
  EXPECT_EQ(seen.size(), 200u);
  for (const auto& w : s) {
    ASSERT_TRUE(layout.contains(w.neuron));
    ASSERT_TRUE(w.input >= WeightRef::kBias && w.input < 8);
  }
  EXPECT_THROW(sample_qkv_weights(layout, QKVIndex(layout).size() + 1, 1), ConfigError);
}

TEST(RelativeError, Definition) {
  EXPECT_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-10), 1e-10 / 1e-8);
}

}  // namespace
}  // namespace kprobe

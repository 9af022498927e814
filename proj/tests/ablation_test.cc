// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/ablation.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "fixtures.h"
#include "kprobe/errors.h"

namespace kprobe {
namespace {

using testing::generic_params;
using testing::random_tokens;
using testing::tiny_model;

ScoreTable table_from(NeuronLayout layout, Vector scores) {
  ScoreTable t;
  t.layout = layout;
  t.scores = std::move(scores);
  t.dataset_id = "test";
  t.num_examples = 1;
  return t;
}

// Independent oracle: stable sort of indices by descending score.
std::vector<std::size_t> oracle_top(const Vector& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::size_t> kept_indices(const NeuronMask& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.keep.size(); ++i)
    if (m.keep[i]) out.push_back(i);
  return out;
}

TEST(Select, CountsAtDefaultFractions) {
  const NeuronLayout layout{2, 32};
  const std::pair<double, std::size_t> cases[] = {{1.0, 192}, {0.5, 96}, {0.25, 48}, {0.1, 20}, {0.01, 2}};
  for (const auto& [f, k] : cases) {
    EXPECT_EQ(select_random(layout, f, 1).kept_count(), k) << f;
    Rng rng(3);
    Vector s(192);
    for (double& x : s) x = rng.uniform();
    EXPECT_EQ(select_by_score(table_from(layout, s), f).kept_count(), k) << f;
  }
}

TEST(Select, MatchesSortOracle) {
  const NeuronLayout layout{2, 32};
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Vector s(layout.size());
    // Coarse values force plenty of ties.
    for (double& x : s) x = static_cast<double>(rng.below(10));
    const double f = 0.01 + 0.99 * rng.uniform();
    const NeuronMask m = select_by_score(table_from(layout, s), f);
    ASSERT_EQ(kept_indices(m), oracle_top(s, kept_count_for(f, layout.size())));
    EXPECT_EQ(m.preserved_fraction, f);
  }
}

TEST(Select, TiesGoToCanonicalOrder) {
  const NeuronLayout layout{1, 4};
  const NeuronMask m = select_by_score(table_from(layout, Vector(12, 1.0)), 0.25);
  EXPECT_EQ(kept_indices(m), (std::vector<std::size_t>{0, 1, 2}));
}

// Property: a smaller fraction keeps a subset of a larger one.
TEST(Select, MasksAreNested) {
  const NeuronLayout layout{2, 32};
  Rng rng(2);
  Vector s(layout.size());
  for (double& x : s) x = static_cast<double>(rng.below(5));
  const ScoreTable t = table_from(layout, s);
  const double fs[] = {1.0, 0.5, 0.25, 0.1, 0.01};
  for (std::size_t i = 1; i < std::size(fs); ++i) {
    const NeuronMask big = select_by_score(t, fs[i - 1]), small = select_by_score(t, fs[i]);
    for (std::size_t n = 0; n < layout.size(); ++n) ASSERT_TRUE(!small.keep[n] || big.keep[n]);
  }
}

TEST(Select, RandomIsSeededAndUniformish) {
  const NeuronLayout layout{2, 32};
  EXPECT_EQ(select_random(layout, 0.25, 4), select_random(layout, 0.25, 4));
  EXPECT_NE(select_random(layout, 0.25, 4).keep, select_random(layout, 0.25, 5).keep);
  std::vector<int> hits(layout.size(), 0);
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const NeuronMask m = select_random(layout, 0.5, seed);
    for (std::size_t i = 0; i < hits.size(); ++i) hits[i] += m.keep[i];
  }
  // Binomial(2000, 0.5): sd about 22.
  for (int h : hits) ASSERT_NEAR(h, 1000, 130);
  EXPECT_EQ(select_random(layout, 0.1, 9).seed, std::optional<std::uint64_t>(9));
}

TEST(Select, RejectsBadInput) {
  const NeuronLayout layout{1, 4};
  EXPECT_THROW(select_random(layout, 0.0, 1), ConfigError);
  EXPECT_THROW(select_random(layout, 1.5, 1), ConfigError);
  EXPECT_THROW(select_by_score(table_from(layout, Vector(5, 1.0)), 0.5), ConfigError);
  Vector nan(12, 1.0);
  nan[3] = std::nan("");
  EXPECT_THROW(select_by_score(table_from(layout, nan), 0.5), ConfigError);
}

TEST(ApplyMask, ZeroesOnlyDroppedRows) {
  const ModelConfig m = tiny_model();
  const Parameters p = generic_params(m, 3);
  const NeuronMask mask = select_random(m.neuron_layout(), 0.3, 2);
  const Parameters q = apply_mask(p, mask);
  for (int l = 0; l < m.num_layers; ++l)
    for (Role r : kRoles)
      for (int u = 0; u < m.embed_dim; ++u) {
        const auto& lp = p.layers[static_cast<std::size_t>(l)];
        const auto& lq = q.layers[static_cast<std::size_t>(l)];
        const auto row_p = lp.projection(r).row(static_cast<std::size_t>(u));
        const auto row_q = lq.projection(r).row(static_cast<std::size_t>(u));
        const double bp = lp.projection_bias(r)[static_cast<std::size_t>(u)];
        const double bq = lq.projection_bias(r)[static_cast<std::size_t>(u)];
        if (mask.kept({l, r, u})) {
          ASSERT_TRUE(std::equal(row_p.begin(), row_p.end(), row_q.begin()));
          ASSERT_EQ(std::bit_cast<std::uint64_t>(bp), std::bit_cast<std::uint64_t>(bq));
        } else {
          for (double w : row_q) ASSERT_EQ(std::bit_cast<std::uint64_t>(w), 0u);
          ASSERT_EQ(std::bit_cast<std::uint64_t>(bq), 0u);
        }
      }
  EXPECT_EQ(q.embedding, p.embedding);
  EXPECT_EQ(q.classifier, p.classifier);
  EXPECT_EQ(q.layers[1].output, p.layers[1].output);
}

TEST(ApplyMask, IdentityAndIdempotence) {
  const ModelConfig m = tiny_model();
  const Parameters p = generic_params(m, 4);
  EXPECT_EQ(apply_mask(p, NeuronMask::all_keep(m.neuron_layout())), p);
  const NeuronMask mask = select_random(m.neuron_layout(), 0.5, 1);
  const Parameters once = apply_mask(p, mask);
  EXPECT_EQ(apply_mask(once, mask), once);
  EXPECT_THROW(apply_mask(p, NeuronMask::all_keep({3, 8})), ConfigError);
}

// Property: weight surgery and the forward-pass mask agree bit for bit.
TEST(ApplyMask, MatchesForwardMask) {
  Rng rng(6);
  for (bool ln : {true, false}) {
    const ModelConfig m = tiny_model(ln);
    const Parameters p = generic_params(m, 5);
    for (int i = 0; i < 30; ++i) {
      const NeuronMask mask = select_random(m.neuron_layout(), 0.05 + 0.9 * rng.uniform(), rng.below(1u << 30));
      const TokenSequence x = random_tokens(rng, m);
      const ForwardTrace a = forward(apply_mask(p, mask), x), b = forward(p, x, mask);
      ASSERT_EQ(a.probabilities, b.probabilities);
      for (std::size_t l = 0; l < a.layers.size(); ++l)
        for (Role r : kRoles) ASSERT_EQ(a.layers[l].role(r), b.layers[l].role(r));
    }
  }
}

TEST(MaskCsv, RoundTrip) {
  const NeuronMask mask = select_random({2, 32}, 0.1, 7);
  const std::string csv = mask_csv(mask);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,role,unit,keep");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 193);
  const NeuronMask back = parse_mask(csv, nlohmann::json::parse(mask_metadata(mask).dump()));
  EXPECT_EQ(back, mask);
  const auto meta = mask_metadata(mask);
  EXPECT_EQ(meta.at("kept").get<std::size_t>(), 20u);
  EXPECT_EQ(meta.at("method"), "random");
}

TEST(MaskCsv, RejectsInconsistentSidecar) {
  const NeuronMask mask = select_random({1, 8}, 0.5, 1);
  auto meta = mask_metadata(mask);
  meta["kept"] = 3;
  EXPECT_THROW(parse_mask(mask_csv(mask), meta), IoError);
}

}  // namespace
}  // namespace kprobe

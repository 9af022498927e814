// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/corpus.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "kprobe/errors.h"

namespace kprobe {
namespace {

TEST(Corpus, DefaultShape) {
  const Corpus c = generate_corpus(CorpusConfig{});
  ASSERT_EQ(c.dataset.size(), 1200u);
  ASSERT_EQ(c.dataset.class_counts.size(), 6u);
  for (auto n : c.dataset.class_counts) EXPECT_EQ(n, 200u);
  for (const auto& ex : c.dataset.examples) {
    ASSERT_EQ(ex.tokens.size(), 64u);
    for (Token t : ex.tokens) ASSERT_TRUE(t >= 0 && t < 20);
  }
  ASSERT_EQ(c.motifs.size(), 6u);
  for (std::size_t a = 0; a < c.motifs.size(); ++a)
    for (std::size_t b = a + 1; b < c.motifs.size(); ++b) EXPECT_NE(c.motifs[a], c.motifs[b]);
}

TEST(Corpus, RegenerationIsByteIdentical) {
  CorpusConfig cfg;
  cfg.seed = 1;
  EXPECT_EQ(corpus_to_json(generate_corpus(cfg)).dump(),
            corpus_to_json(generate_corpus(cfg)).dump());
  CorpusConfig other = cfg;
  other.seed = 2;
  EXPECT_NE(generate_corpus(cfg).dataset, generate_corpus(other).dataset);
}

TEST(Corpus, NoMutationMeansEveryMotifIsPresent) {
  CorpusConfig cfg;
  cfg.motif_mutation_prob = 0.0;
  const Corpus c = generate_corpus(cfg);
  for (const auto& ex : c.dataset.examples)
    ASSERT_TRUE(contains_motif(ex.tokens, c.motifs[static_cast<std::size_t>(ex.label)]));
}

// Brute-force substring classifier: with exact motifs it is perfect on the
// test split.
TEST(Corpus, SubstringClassifierIsPerfectWithoutMutation) {
  CorpusConfig cfg;
  cfg.motif_mutation_prob = 0.0;
  cfg.seed = 5;
  const Corpus c = generate_corpus(cfg);
  const auto [train, test] = split(c.dataset, 0.8, 3);
  std::size_t right = 0;
  for (const auto& ex : test.examples) {
    int guess = -1;
    for (std::size_t k = 0; k < c.motifs.size(); ++k)
      if (contains_motif(ex.tokens, c.motifs[k])) {
        guess = static_cast<int>(k);
        break;
      }
    right += guess == ex.label;
  }
  EXPECT_EQ(right, test.size());
}

TEST(Corpus, MutationRateIsRespected) {
  CorpusConfig cfg;
  cfg.motif_mutation_prob = 1.0;
  const Corpus c = generate_corpus(cfg);
  // Every motif token is replaced by a different symbol, so no exact motif
  // survives.
  for (const auto& ex : c.dataset.examples)
    ASSERT_FALSE(contains_motif(ex.tokens, c.motifs[static_cast<std::size_t>(ex.label)]));
}

TEST(Corpus, RejectsInvalidConfigs) {
  CorpusConfig cfg;
  cfg.motif_len = cfg.seq_len;
  EXPECT_THROW(generate_corpus(cfg), ConfigError);
  cfg = {};
  cfg.num_classes = 1;
  EXPECT_THROW(generate_corpus(cfg), ConfigError);
  cfg = {};
  cfg.alphabet_size = 2;
  cfg.motif_len = 2;
  cfg.num_classes = 5;  // only 4 distinct motifs exist
  EXPECT_THROW(generate_corpus(cfg), ConfigError);
  cfg = {};
  cfg.motif_mutation_prob = 1.5;
  EXPECT_THROW(generate_corpus(cfg), ConfigError);
}

TEST(Split, DefaultArithmetic) {
  const Corpus c = generate_corpus(CorpusConfig{});
  const auto [train, test] = split(c.dataset, 0.8, 11);
  EXPECT_EQ(train.size(), 960u);
  EXPECT_EQ(test.size(), 240u);
  for (auto n : train.class_counts) EXPECT_EQ(n, 160u);
  for (auto n : test.class_counts) EXPECT_EQ(n, 40u);
}

TEST(Split, DeterministicPerSeed) {
  const Corpus c = generate_corpus(CorpusConfig{});
  EXPECT_EQ(split(c.dataset, 0.8, 4), split(c.dataset, 0.8, 4));
  EXPECT_NE(split(c.dataset, 0.8, 4).first, split(c.dataset, 0.8, 5).first);
}

// Property: train and test together are a permutation of the input, for a
// range of fractions and seeds.
TEST(Split, PreservesMultisetExactly) {
  CorpusConfig cfg;
  cfg.sequences_per_class = 37;
  const Corpus c = generate_corpus(cfg);
  for (double f : {0.1, 0.33, 0.5, 0.8, 0.95})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto [train, test] = split(c.dataset, f, seed);
      std::map<std::pair<TokenSequence, int>, int> count;
      for (const auto& e : c.dataset.examples) ++count[{e.tokens, e.label}];
      for (const auto* part : {&train, &test})
        for (const auto& e : part->examples) --count[{e.tokens, e.label}];
      for (const auto& [k, v] : count) ASSERT_EQ(v, 0);
      for (std::size_t k = 0; k < train.class_counts.size(); ++k)
        ASSERT_EQ(train.class_counts[k], static_cast<std::size_t>(std::llround(f * 37)));
    }
}

TEST(Split, RejectsBadFraction) {
  const Corpus c = generate_corpus(CorpusConfig{});
  EXPECT_THROW(split(c.dataset, 0.0, 1), ConfigError);
  EXPECT_THROW(split(c.dataset, 1.0, 1), ConfigError);
}

TEST(Corpus, JsonRoundTrip) {
  CorpusConfig cfg;
  cfg.sequences_per_class = 5;
  const Corpus c = generate_corpus(cfg);
  const nlohmann::json j = corpus_to_json(c);
  ASSERT_TRUE(j.contains("config"));
  ASSERT_TRUE(j.contains("motifs"));
  ASSERT_TRUE(j.contains("examples"));
  EXPECT_EQ(corpus_from_json(nlohmann::json::parse(j.dump())), c);
}

TEST(Dataset, FingerprintTracksContent) {
  CorpusConfig cfg;
  cfg.sequences_per_class = 4;
  Dataset d = generate_corpus(cfg).dataset;
  const std::string before = d.fingerprint();
  EXPECT_EQ(before.size(), 16u);
  d.examples[0].tokens[0] = (d.examples[0].tokens[0] + 1) % 20;
  EXPECT_NE(before, d.fingerprint());
}

}  // namespace
}  // namespace kprobe

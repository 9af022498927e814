// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace kprobe {

using Token = int;
using TokenSequence = std::vector<Token>;

struct CorpusConfig {
  int alphabet_size = 20;
  int num_classes = 6;
  int sequences_per_class = 200;
  int seq_len = 64;
  int motif_len = 5;
  double motif_mutation_prob = 0.05;
  std::uint64_t seed = 1;

  // Throws ConfigError on the first violated invariant.
  void validate() const;

  friend bool operator==(const CorpusConfig&, const CorpusConfig&) = default;
};

struct LabeledSequence {
  TokenSequence tokens;
  int label = 0;

  friend bool operator==(const LabeledSequence&, const LabeledSequence&) = default;
};

struct Dataset {
  std::vector<LabeledSequence> examples;
  std::vector<std::size_t> class_counts;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  // Builds a dataset and its per-class census.
  static Dataset from_examples(std::vector<LabeledSequence> examples, int num_classes);

  // Stable content hash (FNV-1a over labels and tokens), hex encoded.
  std::string fingerprint() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct Corpus {
  CorpusConfig config;
  std::vector<TokenSequence> motifs;  // motifs[c] is planted in class c
  Dataset dataset;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Synthetic motif corpus. Every sequence is uniform background with its class
// motif planted at a uniform position; each planted token is replaced by a
// different random token with probability motif_mutation_prob. Backgrounds
// that happen to contain another class's motif verbatim are redrawn, so with
// no mutation the label is recoverable by substring search.
Corpus generate_corpus(const CorpusConfig& config);

// Stratified split: each class contributes round(train_fraction * count)
// examples to the first dataset. Both outputs keep the input's relative order.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  std::uint64_t seed);

// True if `needle` occurs contiguously in `haystack`.
bool contains_motif(const TokenSequence& haystack, const TokenSequence& needle);

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

nlohmann::json corpus_to_json(const Corpus& corpus);
Corpus corpus_from_json(const nlohmann::json& j);

}  // namespace kprobe

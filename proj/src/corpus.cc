// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/corpus.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "kprobe/errors.h"
#include "kprobe/random.h"

namespace kprobe {
namespace {

constexpr std::uint64_t kMotifStream = 1;
constexpr std::uint64_t kSequenceStream = 2;

// Number of distinct motifs, saturating at `cap`.
std::uint64_t motif_space(int alphabet_size, int motif_len, std::uint64_t cap) {
  std::uint64_t n = 1;
  for (int i = 0; i < motif_len && n < cap; ++i) n *= static_cast<std::uint64_t>(alphabet_size);
  return std::min(n, cap);
}

bool contains_foreign_motif(const TokenSequence& seq, const std::vector<TokenSequence>& motifs,
                            int own_class) {
  for (std::size_t c = 0; c < motifs.size(); ++c) {
    if (static_cast<int>(c) != own_class && contains_motif(seq, motifs[c])) return true;
  }
  return false;
}

}  // namespace

void CorpusConfig::validate() const {
  if (alphabet_size <= 0) throw ConfigError("alphabet_size must be > 0");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (sequences_per_class <= 0) throw ConfigError("sequences_per_class must be > 0");
  if (seq_len <= 0) throw ConfigError("seq_len must be > 0");
  if (motif_len <= 0) throw ConfigError("motif_len must be > 0");
  if (motif_len >= seq_len) throw ConfigError("motif_len must be < seq_len");
  if (!(motif_mutation_prob >= 0.0 && motif_mutation_prob <= 1.0))
    throw ConfigError("motif_mutation_prob must lie in [0, 1]");
  const auto classes = static_cast<std::uint64_t>(num_classes);
  if (motif_space(alphabet_size, motif_len, classes) < classes)
    throw ConfigError("alphabet_size^motif_len < num_classes: cannot draw distinct motifs");
}

Dataset Dataset::from_examples(std::vector<LabeledSequence> examples, int num_classes) {
  Dataset d;
  d.class_counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (const auto& ex : examples) {
    if (ex.label < 0 || ex.label >= num_classes)
      throw ConfigError("label " + std::to_string(ex.label) + " out of range");
    ++d.class_counts[static_cast<std::size_t>(ex.label)];
  }
  d.examples = std::move(examples);
  return d;
}

std::string Dataset::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  mix(examples.size());
  for (const auto& ex : examples) {
    mix(static_cast<std::uint64_t>(ex.label));
    mix(ex.tokens.size());
    for (Token t : ex.tokens) mix(static_cast<std::uint64_t>(t));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool contains_motif(const TokenSequence& haystack, const TokenSequence& needle) {
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;

  Rng motif_rng(derive_seed(config.seed, kMotifStream));
  const auto alphabet = static_cast<std::uint64_t>(config.alphabet_size);
  while (corpus.motifs.size() < static_cast<std::size_t>(config.num_classes)) {
    TokenSequence motif(static_cast<std::size_t>(config.motif_len));
    for (auto& t : motif) t = static_cast<Token>(motif_rng.below(alphabet));
    if (std::find(corpus.motifs.begin(), corpus.motifs.end(), motif) == corpus.motifs.end())
      corpus.motifs.push_back(std::move(motif));
  }

  Rng rng(derive_seed(config.seed, kSequenceStream));
  const auto len = static_cast<std::size_t>(config.seq_len);
  const auto mlen = static_cast<std::size_t>(config.motif_len);
  std::vector<LabeledSequence> examples;
  examples.reserve(static_cast<std::size_t>(config.num_classes) *
                   static_cast<std::size_t>(config.sequences_per_class));
  for (int c = 0; c < config.num_classes; ++c) {
    const auto& motif = corpus.motifs[static_cast<std::size_t>(c)];
    for (int i = 0; i < config.sequences_per_class; ++i) {
      LabeledSequence ex;
      ex.label = c;
      ex.tokens.resize(len);
      do {
        for (auto& t : ex.tokens) t = static_cast<Token>(rng.below(alphabet));
        const auto pos = static_cast<std::size_t>(rng.below(len - mlen + 1));
        for (std::size_t k = 0; k < mlen; ++k) {
          Token t = motif[k];
          if (config.alphabet_size > 1 && rng.bernoulli(config.motif_mutation_prob)) {
            // Uniform over the other alphabet_size - 1 symbols.
            const auto r = static_cast<Token>(rng.below(alphabet - 1));
            t = r >= t ? r + 1 : r;
          }
          ex.tokens[pos + k] = t;
        }
      } while (contains_foreign_motif(ex.tokens, corpus.motifs, c));
      examples.push_back(std::move(ex));
    }
  }
  corpus.dataset = Dataset::from_examples(std::move(examples), config.num_classes);
  return corpus;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must lie in (0, 1)");
  const int num_classes = static_cast<int>(dataset.class_counts.size());
  std::vector<std::vector<std::size_t>> by_class(dataset.class_counts.size());
  for (std::size_t i = 0; i < dataset.examples.size(); ++i)
    by_class[static_cast<std::size_t>(dataset.examples[i].label)].push_back(i);

  Rng rng(seed);
  std::vector<char> in_train(dataset.examples.size(), 0);
  for (auto& idx : by_class) {
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < n_train && k < idx.size(); ++k) in_train[idx[k]] = 1;
  }

  std::vector<LabeledSequence> train, test;
  for (std::size_t i = 0; i < dataset.examples.size(); ++i)
    (in_train[i] ? train : test).push_back(dataset.examples[i]);
  return {Dataset::from_examples(std::move(train), num_classes),
          Dataset::from_examples(std::move(test), num_classes)};
}

void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{{"alphabet_size", c.alphabet_size},
                     {"num_classes", c.num_classes},
                     {"sequences_per_class", c.sequences_per_class},
                     {"seq_len", c.seq_len},
                     {"motif_len", c.motif_len},
                     {"motif_mutation_prob", c.motif_mutation_prob},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CorpusConfig& c) {
  const CorpusConfig d;
  c.alphabet_size = j.value("alphabet_size", d.alphabet_size);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.sequences_per_class = j.value("sequences_per_class", d.sequences_per_class);
  c.seq_len = j.value("seq_len", d.seq_len);
  c.motif_len = j.value("motif_len", d.motif_len);
  c.motif_mutation_prob = j.value("motif_mutation_prob", d.motif_mutation_prob);
  c.seed = j.value("seed", d.seed);
}

nlohmann::json corpus_to_json(const Corpus& corpus) {
  nlohmann::json examples = nlohmann::json::array();
  for (const auto& ex : corpus.dataset.examples)
    examples.push_back({{"tokens", ex.tokens}, {"label", ex.label}});
  return {{"config", corpus.config}, {"motifs", corpus.motifs}, {"examples", std::move(examples)}};
}

Corpus corpus_from_json(const nlohmann::json& j) {
  try {
    Corpus corpus;
    corpus.config = j.at("config").get<CorpusConfig>();
    corpus.config.validate();
    corpus.motifs = j.at("motifs").get<std::vector<TokenSequence>>();
    std::vector<LabeledSequence> examples;
    for (const auto& e : j.at("examples")) {
      LabeledSequence ex{e.at("tokens").get<TokenSequence>(), e.at("label").get<int>()};
      if (ex.tokens.size() != static_cast<std::size_t>(corpus.config.seq_len))
        throw IoError("corpus example has wrong length");
      for (Token t : ex.tokens)
        if (t < 0 || t >= corpus.config.alphabet_size)
          throw IoError("corpus token out of range");
      examples.push_back(std::move(ex));
    }
    corpus.dataset = Dataset::from_examples(std::move(examples), corpus.config.num_classes);
    return corpus;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed corpus JSON: ") + e.what());
  }
}

}  // namespace kprobe

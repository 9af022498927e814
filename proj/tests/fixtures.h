// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "kprobe/corpus.h"
#include "kprobe/model.h"
#include "kprobe/random.h"

namespace kprobe::testing {

inline ModelConfig tiny_model(bool layernorm = true) {
  ModelConfig m;
  m.alphabet_size = 7;
  m.num_classes = 3;
  m.embed_dim = 8;
  m.num_layers = 2;
  m.num_heads = 2;
  m.seq_len = 10;
  m.include_layernorm = layernorm;
  return m;
}

inline TokenSequence random_tokens(Rng& rng, const ModelConfig& m) {
  TokenSequence t(static_cast<std::size_t>(m.seq_len));
  for (auto& x : t) x = static_cast<Token>(rng.below(static_cast<std::uint64_t>(m.alphabet_size)));
  return t;
}

inline LabeledSequence random_example(Rng& rng, const ModelConfig& m) {
  return {random_tokens(rng, m),
          static_cast<int>(rng.below(static_cast<std::uint64_t>(m.num_classes)))};
}

// init_params with every bias, gain and offset also perturbed, so no tensor
// sits at a special value.
inline Parameters generic_params(const ModelConfig& m, std::uint64_t seed) {
  Parameters p = init_params(m, seed);
  Rng rng(seed ^ 0x5eedULL);
  for (auto& layer : p.layers) {
    for (auto* v : {&layer.query_bias, &layer.key_bias, &layer.value_bias, &layer.output_bias})
      for (double& x : *v) x = rng.uniform(-0.3, 0.3);
    for (double& x : layer.norm_gain) x = rng.uniform(0.7, 1.3);
    for (double& x : layer.norm_bias) x = rng.uniform(-0.2, 0.2);
  }
  for (double& x : p.classifier_bias) x = rng.uniform(-0.3, 0.3);
  return p;
}

inline Dataset random_dataset(const ModelConfig& m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledSequence> ex;
  for (std::size_t i = 0; i < n; ++i) ex.push_back(random_example(rng, m));
  return Dataset::from_examples(std::move(ex), m.num_classes);
}

}  // namespace kprobe::testing

namespace kprobe::testing {

// A pipeline small enough to run every stage in about a second.
inline nlohmann::json tiny_pipeline_json(const std::string& out_dir) {
  return {{"corpus",
           {{"alphabet_size", 7}, {"num_classes", 3}, {"sequences_per_class", 20},
            {"seq_len", 10}, {"motif_len", 3}}},
          {"model", {{"embed_dim", 8}}},
          {"train", {{"epochs", 2}, {"batch_size", 8}}},
          {"ig", {{"riemann_steps", 4}}},
          {"check",
           {{"fd_samples", 20}, {"completeness_examples", 4}, {"per_weight_samples", 4},
            {"ablation_inputs", 6}}},
          {"fractions", {0.5, 0.25}},
          {"random_seeds", {1, 2}},
          {"bin_size", 4},
          {"out_dir", out_dir}};
}

}  // namespace kprobe::testing

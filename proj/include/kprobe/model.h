// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kprobe/corpus.h"
#include "kprobe/neuron.h"
#include "kprobe/tensor.h"

namespace kprobe {

struct ModelConfig {
  int alphabet_size = 20;
  int num_classes = 6;
  int embed_dim = 32;
  int num_layers = 2;
  int num_heads = 2;
  int seq_len = 64;
  bool include_layernorm = true;

  void validate() const;
  int head_dim() const { return embed_dim / num_heads; }
  NeuronLayout neuron_layout() const { return {num_layers, embed_dim}; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// One attention block. Projection matrices are [out x in]: row i holds the
// incoming weights of output unit i, so y = W x + b.
struct AttentionLayer {
  Matrix query, key, value, output;
  Vector query_bias, key_bias, value_bias, output_bias;
  Vector norm_gain, norm_bias;  // empty when layernorm is disabled

  Matrix& projection(Role role);
  const Matrix& projection(Role role) const;
  Vector& projection_bias(Role role);
  const Vector& projection_bias(Role role) const;

  friend bool operator==(const AttentionLayer&, const AttentionLayer&) = default;
};

struct Parameters {
  ModelConfig config;
  Matrix embedding;                   // [alphabet_size x d]
  std::vector<AttentionLayer> layers;
  Matrix classifier;                  // [d x num_classes]
  Vector classifier_bias;             // [num_classes]

  // All-zero parameter set with the shapes implied by `config`.
  static Parameters zeros(const ModelConfig& config);

  // Visits every tensor in a fixed order as (name, shape, values).
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    visit(*this, fn);
  }

  std::size_t num_values() const;
  bool all_finite() const;

  friend bool operator==(const Parameters&, const Parameters&) = default;

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    auto mat = [&fn](const std::string& name, auto& m) {
      fn(name, std::vector<std::size_t>{m.rows(), m.cols()}, m.flat());
    };
    auto vec = [&fn](const std::string& name, auto& v) {
      fn(name, std::vector<std::size_t>{v.size()}, std::span(v));
    };
    mat("embedding", self.embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      mat(p + "query.weight", layer.query);
      vec(p + "query.bias", layer.query_bias);
      mat(p + "key.weight", layer.key);
      vec(p + "key.bias", layer.key_bias);
      mat(p + "value.weight", layer.value);
      vec(p + "value.bias", layer.value_bias);
      mat(p + "output.weight", layer.output);
      vec(p + "output.bias", layer.output_bias);
      if (self.config.include_layernorm) {
        vec(p + "norm.gain", layer.norm_gain);
        vec(p + "norm.bias", layer.norm_bias);
      }
    }
    mat("classifier.weight", self.classifier);
    vec("classifier.bias", self.classifier_bias);
  }
};

// Uniform(-a, a) weights with a = sqrt(3 / fan_in), i.e. variance 1 / fan_in
// (fan_in = 1 for the embedding table). Biases and layernorm offsets are 0,
// layernorm gains are 1.
Parameters init_params(const ModelConfig& config, std::uint64_t seed);

struct LayerActivations {
  Matrix query, key, value;  // [seq_len x d] projection outputs

  const Matrix& role(Role r) const;
};

struct ForwardTrace {
  std::vector<LayerActivations> layers;
  Vector probabilities;

  double activation(const NeuronId& n, std::size_t position) const {
    return layers[static_cast<std::size_t>(n.layer)].role(n.role)(position,
                                                                  static_cast<std::size_t>(n.unit));
  }
};

// Sinusoidal position encoding [seq_len x d]. Cached per shape.
const Matrix& position_encoding(int seq_len, int embed_dim);

// Full forward pass. Masked neurons output exactly 0.0 at every position.
// Throws NumericError naming the layer and stage on a non-finite value.
ForwardTrace forward(const Parameters& params, const TokenSequence& tokens);
ForwardTrace forward(const Parameters& params, const TokenSequence& tokens,
                     const NeuronMask& mask);

// Class probabilities only; same arithmetic as forward().
Vector class_probabilities(const Parameters& params, const TokenSequence& tokens);
Vector class_probabilities(const Parameters& params, const TokenSequence& tokens,
                           const NeuronMask& mask);

// p(label | tokens), the quantity attributions are computed for.
double correct_class_prob(const Parameters& params, const LabeledSequence& example);
double correct_class_prob(const Parameters& params, const LabeledSequence& example,
                          const NeuronMask& mask);

// Argmax class, ties to the lowest index.
int argmax(std::span<const double> probabilities);

}  // namespace kprobe

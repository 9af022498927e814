// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Forward pass with saved intermediates and its hand-derived backward pass.
// Shared by model, grad, train and attribution; not part of the public API.

#pragma once

#include <span>
#include <vector>

#include "kprobe/model.h"

namespace kprobe::detail {

struct LayerCache {
  Matrix input;       // [T x d] layer input
  Matrix query, key, value;
  Matrix attention;   // [H*T x T], row h*T + t = head h, query position t
  Matrix context;     // [T x d] concatenated head outputs
  Matrix normalized;  // [T x d] (R - mean) * rstd, layernorm only
  Vector rstd;        // [T]
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix output;      // [T x d] final layer output
  Vector pooled;      // [d]
  Vector logits;      // [C]
  Vector probs;       // [C]
};

// Runs the network, filling `cache`. `mask` may be null.
void run_forward(const Parameters& params, const TokenSequence& tokens, const NeuronMask* mask,
                 ForwardCache& cache);

// Gradient of sum_c dlogits[c] * logit_c with respect to every parameter,
// written (not accumulated) into `grad`, which must be shaped like `params`.
// `cache` must come from an unmasked run_forward on the same inputs.
void backward(const Parameters& params, const TokenSequence& tokens, const ForwardCache& cache,
              std::span<const double> dlogits, Parameters& grad);

// d p_label / d logits.
Vector prob_logit_grad(std::span<const double> probs, int label);

// d (-log p_label) / d logits.
Vector cross_entropy_logit_grad(std::span<const double> probs, int label);

}  // namespace kprobe::detail

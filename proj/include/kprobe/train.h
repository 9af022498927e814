// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "kprobe/corpus.h"
#include "kprobe/model.h"

namespace kprobe {

// Mini-batch Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) on mean
// cross-entropy.
struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 7;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

// Row 0 is the full training set evaluated before any update. Row e >= 1
// averages the per-example loss and accuracy seen by the forward passes of
// epoch e, i.e. before each batch's update.
using TrainHistory = std::vector<EpochStats>;

struct TrainResult {
  Parameters params;
  TrainHistory history;
};

// Deterministic for a fixed seed: the shuffle order comes from the seed and
// per-example gradients are summed in batch order regardless of threading.
// Throws NumericError naming the epoch if the loss becomes non-finite.
TrainResult train(const Parameters& init, const Dataset& train_set, const TrainConfig& config);

// Adam state for one parameter set, exposed for the overfit sanity tests.
class AdamOptimizer {
 public:
  AdamOptimizer(const Parameters& shape, const TrainConfig& config);
  void step(Parameters& params, const Parameters& grad);

 private:
  TrainConfig config_;
  std::vector<double> m_, v_;
  long step_ = 0;
};

// Mean cross-entropy and gradient over `batch` (indices into `data`).
double batch_loss_and_grad(const Parameters& params, const Dataset& data,
                           const std::vector<std::size_t>& batch, Parameters& grad,
                           std::size_t* correct = nullptr);

std::string history_csv(const TrainHistory& history);

}  // namespace kprobe

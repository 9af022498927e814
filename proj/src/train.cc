// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/train.h"

#include <cmath>
#include <numeric>

#include "kprobe/errors.h"
#include "kprobe/io.h"
#include "kprobe/parallel.h"
#include "kprobe/random.h"
#include "network.h"

namespace kprobe {
namespace {

void add_into(Parameters& acc, const Parameters& g) {
  std::vector<std::span<const double>> src;
  g.for_each_tensor([&src](const std::string&, const auto&, std::span<const double> v) {
    src.push_back(v);
  });
  std::size_t k = 0;
  acc.for_each_tensor([&](const std::string&, const auto&, std::span<double> v) {
    const auto s = src[k++];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += s[i];
  });
}

void scale_into(Parameters& p, double s) {
  p.for_each_tensor([s](const std::string&, const auto&, std::span<double> v) {
    for (double& x : v) x *= s;
  });
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0) throw ConfigError("epochs and batch_size must be > 0");
  if (!(learning_rate > 0.0) || !(adam_epsilon > 0.0))
    throw ConfigError("learning_rate and adam_epsilon must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},       {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
                     {"beta2", c.beta2},         {"adam_epsilon", c.adam_epsilon},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_epsilon = j.value("adam_epsilon", d.adam_epsilon);
  c.seed = j.value("seed", d.seed);
}

AdamOptimizer::AdamOptimizer(const Parameters& shape, const TrainConfig& config)
    : config_(config), m_(shape.num_values(), 0.0), v_(shape.num_values(), 0.0) {}

void AdamOptimizer::step(Parameters& params, const Parameters& grad) {
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  std::vector<std::span<const double>> gs;
  grad.for_each_tensor([&gs](const std::string&, const auto&, std::span<const double> v) {
    gs.push_back(v);
  });
  std::size_t t = 0, k = 0;
  params.for_each_tensor([&](const std::string&, const auto&, std::span<double> w) {
    const auto g = gs[t++];
    for (std::size_t i = 0; i < w.size(); ++i, ++k) {
      m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * g[i];
      v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m_[k] / c1;
      const double vhat = v_[k] / c2;
      w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.adam_epsilon);
    }
  });
}

double batch_loss_and_grad(const Parameters& params, const Dataset& data,
                           const std::vector<std::size_t>& batch, Parameters& grad,
                           std::size_t* correct) {
  const std::size_t n = batch.size();
  std::vector<Parameters> per_example(n, Parameters::zeros(params.config));
  std::vector<double> losses(n);
  std::vector<int> hits(n);
  parallel_for(n, [&](std::size_t b) {
    const auto& ex = data.examples[batch[b]];
    detail::ForwardCache cache;
    detail::run_forward(params, ex.tokens, nullptr, cache);
    const double p = cache.probs[static_cast<std::size_t>(ex.label)];
    losses[b] = -std::log(p);
    hits[b] = argmax(cache.probs) == ex.label;
    detail::backward(params, ex.tokens, cache,
                     detail::cross_entropy_logit_grad(cache.probs, ex.label), per_example[b]);
  });

  grad = Parameters::zeros(params.config);
  double loss = 0.0;
  std::size_t right = 0;
  for (std::size_t b = 0; b < n; ++b) {
    add_into(grad, per_example[b]);
    loss += losses[b];
    right += static_cast<std::size_t>(hits[b]);
  }
  scale_into(grad, 1.0 / static_cast<double>(n));
  if (correct != nullptr) *correct = right;
  return loss / static_cast<double>(n);
}

TrainResult train(const Parameters& init, const Dataset& train_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");

  TrainResult result{init, {}};
  Parameters& params = result.params;
  const std::size_t n = train_set.size();

  // Epoch 0: the untouched model on the whole training set.
  {
    std::vector<double> losses(n);
    std::vector<int> hits(n);
    parallel_for(n, [&](std::size_t i) {
      const auto& ex = train_set.examples[i];
      const Vector p = class_probabilities(params, ex.tokens);
      losses[i] = -std::log(p[static_cast<std::size_t>(ex.label)]);
      hits[i] = argmax(p) == ex.label;
    });
    const double loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
    const double acc = static_cast<double>(std::accumulate(hits.begin(), hits.end(), 0)) /
                       static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericError("non-finite training loss at epoch 0");
    result.history.push_back({0, loss, acc});
  }

  AdamOptimizer adam(params, config);
  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Parameters grad = Parameters::zeros(params.config);
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t correct_sum = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
      std::size_t correct = 0;
      double loss = 0.0;
      try {
        loss = batch_loss_and_grad(params, train_set, batch, grad, &correct);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      loss_sum += loss * static_cast<double>(batch.size());
      correct_sum += correct;
      adam.step(params, grad);
    }
    result.history.push_back({epoch, loss_sum / static_cast<double>(n),
                              static_cast<double>(correct_sum) / static_cast<double>(n)});
  }
  return result;
}

std::string history_csv(const TrainHistory& history) {
  std::string out = "epoch,loss,train_acc\n";
  for (const auto& h : history)
    out += std::to_string(h.epoch) + "," + format_double(h.loss) + "," +
           format_double(h.train_accuracy) + "\n";
  return out;
}

}  // namespace kprobe

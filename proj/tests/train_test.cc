// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/train.h"

#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.h"
#include "kprobe/checkpoint.h"
#include "kprobe/errors.h"
#include "kprobe/parallel.h"

namespace kprobe {
namespace {

using testing::tiny_model;

Dataset small_corpus(int per_class, int seq_len = 10) {
  CorpusConfig c;
  c.alphabet_size = 7;
  c.num_classes = 3;
  c.sequences_per_class = per_class;
  c.seq_len = seq_len;
  c.motif_len = 3;
  c.seed = 4;
  return generate_corpus(c).dataset;
}

TEST(TrainConfig, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.epochs, 30);
  EXPECT_EQ(c.batch_size, 32);
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.beta1, 0.9);
  EXPECT_EQ(c.beta2, 0.999);
  EXPECT_EQ(c.adam_epsilon, 1e-8);
  TrainConfig bad;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.learning_rate = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

// First Adam step from zero moments moves each parameter by
// -lr * g / (|g| + eps) after bias correction.
TEST(Adam, FirstStepOracle) {
  const ModelConfig m = tiny_model();
  Parameters p = Parameters::zeros(m);
  Parameters g = Parameters::zeros(m);
  g.embedding(0, 0) = 0.5;
  g.embedding(0, 1) = -2.0;
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  AdamOptimizer adam(p, cfg);
  adam.step(p, g);
  EXPECT_NEAR(p.embedding(0, 0), -0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.embedding(0, 1), 0.01 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.embedding(0, 2), 0.0);
}

TEST(Adam, SecondStepOracle) {
  const ModelConfig m = tiny_model();
  Parameters p = Parameters::zeros(m);
  Parameters g = Parameters::zeros(m);
  TrainConfig cfg;
  AdamOptimizer adam(p, cfg);
  g.classifier_bias[0] = 1.0;
  adam.step(p, g);
  g.classifier_bias[0] = 3.0;
  adam.step(p, g);
  const double m2 = 0.9 * 0.1 * 1.0 + 0.1 * 3.0;
  const double v2 = 0.999 * 0.001 * 1.0 + 0.001 * 9.0;
  const double mhat = m2 / (1 - 0.81), vhat = v2 / (1 - 0.999 * 0.999);
  const double first = -1e-3 * 1.0 / (1.0 + 1e-8);
  EXPECT_NEAR(p.classifier_bias[0], first - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8), 1e-15);
}

TEST(Train, EpochZeroLossIsNearChance) {
  const Corpus c = generate_corpus(CorpusConfig{});
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1200;
  const auto r = train(init_params(ModelConfig{}, 3), c.dataset, cfg);
  ASSERT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.history[0].epoch, 0);
  EXPECT_NEAR(r.history[0].loss, std::log(6.0), 0.1);
}

TEST(Train, SingleBatchOverfits) {
  const ModelConfig m = tiny_model();
  Dataset d = small_corpus(3);
  d.examples.resize(8);
  d = Dataset::from_examples(d.examples, m.num_classes);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-2;
  const auto r = train(init_params(m, 1), d, cfg);
  EXPECT_LT(r.history.back().loss, 0.01);
  for (const auto& h : r.history) ASSERT_TRUE(std::isfinite(h.loss));
}

TEST(Train, SameSeedGivesIdenticalCheckpointBytes) {
  const ModelConfig m = tiny_model();
  const Dataset d = small_corpus(20);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 7;
  const auto a = train(init_params(m, 2), d, cfg);
  const int saved = num_threads();
  set_num_threads(saved == 1 ? 3 : 1);
  const auto b = train(init_params(m, 2), d, cfg);
  set_num_threads(saved);
  EXPECT_EQ(encode_checkpoint(a.params, "b").blob, encode_checkpoint(b.params, "b").blob);
  cfg.seed += 1;
  const auto c = train(init_params(m, 2), d, cfg);
  EXPECT_NE(encode_checkpoint(a.params, "b").blob, encode_checkpoint(c.params, "b").blob);
}

TEST(Train, LearnsAnEasyMotifTask) {
  CorpusConfig cc;
  cc.alphabet_size = 8;
  cc.num_classes = 3;
  cc.sequences_per_class = 60;
  cc.seq_len = 8;
  cc.motif_len = 4;
  cc.motif_mutation_prob = 0.0;
  const Corpus c = generate_corpus(cc);
  ModelConfig m = tiny_model();
  m.alphabet_size = 8;
  m.seq_len = 8;
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 16;
  cfg.learning_rate = 5e-3;
  const auto r = train(init_params(m, 5), c.dataset, cfg);
  EXPECT_LT(r.history.back().loss, r.history.front().loss);
  EXPECT_GE(r.history.back().train_accuracy, 0.8);
}

TEST(Train, DivergenceNamesTheEpoch) {
  const ModelConfig m = tiny_model();
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 1e300;
  try {
    train(init_params(m, 1), small_corpus(5), cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsEmptyDataset) {
  EXPECT_THROW(train(init_params(tiny_model(), 1), Dataset{}, TrainConfig{}), ConfigError);
}

TEST(History, CsvFormat) {
  const TrainHistory h = {{0, 1.5, 0.25}, {1, 1.0, 0.5}};
  EXPECT_EQ(history_csv(h), "epoch,loss,train_acc\n0,1.5,0.25\n1,1,0.5\n");
}

}  // namespace
}  // namespace kprobe

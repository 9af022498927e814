// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/report.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "fixtures.h"
#include "kprobe/ablation.h"
#include "kprobe/errors.h"
#include "kprobe/io.h"

namespace kprobe {
namespace {

using testing::generic_params;
using testing::random_dataset;
using testing::tiny_model;

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

struct Fixture {
  ModelConfig model = tiny_model();
  Parameters params = generic_params(model, 3);
  Dataset test = random_dataset(model, 12, 4);
  ScoreTable act = activation_scores(params, test);
  ScoreTable ig = [this] {
    IGConfig cfg;
    cfg.riemann_steps = 3;
    return ig_scores(params, test, cfg);
  }();
};

TEST(Accuracy, ConstantPredictorScoresItsClassShare) {
  ModelConfig m = tiny_model();
  m.num_classes = 6;
  Parameters p = generic_params(m, 1);
  // Zero classifier weights with one dominant bias: always predicts class 2.
  for (double& w : p.classifier.flat()) w = 0.0;
  for (double& b : p.classifier_bias) b = 0.0;
  p.classifier_bias[2] = 5.0;
  std::vector<LabeledSequence> ex;
  Rng rng(2);
  for (int c = 0; c < 6; ++c)
    for (int i = 0; i < 10; ++i) ex.push_back({testing::random_tokens(rng, m), c});
  EXPECT_EQ(accuracy(p, Dataset::from_examples(ex, 6)), 1.0 / 6.0);
}

TEST(Accuracy, MaskedMatchesSurgery) {
  const Fixture f;
  const NeuronMask mask = select_random(f.model.neuron_layout(), 0.4, 3);
  EXPECT_EQ(accuracy(f.params, f.test, mask), accuracy(apply_mask(f.params, mask), f.test));
  EXPECT_EQ(accuracy(f.params, f.test, NeuronMask::all_keep(f.model.neuron_layout())),
            accuracy(f.params, f.test));
}

TEST(Grid, FractionsPrependOne) {
  const double a[] = {0.5, 0.1};
  EXPECT_EQ(grid_fractions(a), (std::vector<double>{1.0, 0.5, 0.1}));
  const double b[] = {1.0, 0.5};
  EXPECT_EQ(grid_fractions(b), (std::vector<double>{1.0, 0.5}));
  const double bad[] = {0.0};
  EXPECT_THROW(grid_fractions(bad), ConfigError);
}

TEST(Grid, ShapeAndFullColumn) {
  const Fixture f;
  const double fr[] = {0.5, 0.25};
  const std::uint64_t seeds[] = {1, 2, 3};
  const AccuracyGrid g = build_grid(f.params, f.test, f.act, f.ig, fr, seeds);
  ASSERT_EQ(g.methods.size(), 3u);
  ASSERT_EQ(g.fractions.size(), 3u);
  const double full = accuracy(f.params, f.test);
  for (const auto& row : g.cells) {
    ASSERT_EQ(row.size(), 3u);
    EXPECT_EQ(row[0], full);
  }
  // Random cells are the per-seed mean.
  for (std::size_t fi = 1; fi < 3; ++fi) {
    double mean = 0.0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double acc = accuracy(f.params, f.test, select_random(f.model.neuron_layout(), g.fractions[fi], seeds[s]));
      EXPECT_EQ(g.random_per_seed[fi][s], acc);
      mean += acc;
    }
    EXPECT_DOUBLE_EQ(g.at(SelectionMethod::Random, fi), mean / 3.0);
    EXPECT_EQ(g.at(SelectionMethod::Activation, fi),
              accuracy(f.params, f.test, select_by_score(f.act, g.fractions[fi])));
  }
  EXPECT_EQ(grid_from_json(nlohmann::json::parse(grid_json(g).dump())), g);
}

TEST(Grid, CsvHasOneRowPerCell) {
  const Fixture f;
  const double fr[] = {0.5, 0.25, 0.1, 0.01};
  const std::uint64_t seeds[] = {1};
  const std::string csv = grid_csv(build_grid(f.params, f.test, f.act, f.ig, fr, seeds));
  const auto lines = split_lines(csv);
  EXPECT_EQ(lines[0], "method,fraction,accuracy");
  EXPECT_EQ(lines.size(), 1u + 3u * 5u);
  EXPECT_EQ(count(csv, "\nrandom,0.25,"), 1u);
}

TEST(Heatmap, AllKeepIsAllOnes) {
  const NeuronLayout layout{2, 32};
  const HeatmapDensity h = heatmap(NeuronMask::all_keep(layout), 8);
  EXPECT_EQ(h.rows.size(), 6u);
  EXPECT_EQ(h.cell_count(), 24u);
  for (const auto& r : h.rows)
    for (double b : r.bins) EXPECT_EQ(b, 1.0);
  EXPECT_EQ(h.weighted_mean(), 1.0);
}

TEST(Heatmap, BinAtLeastWidthGivesOneColumn) {
  const NeuronMask m = select_random({2, 32}, 0.25, 1);
  for (std::size_t bin : {32u, 100u}) {
    const HeatmapDensity h = heatmap(m, bin);
    for (const auto& r : h.rows) {
      ASSERT_EQ(r.bins.size(), 1u);
      EXPECT_EQ(r.bin_sizes[0], 32u);
    }
  }
  EXPECT_THROW(heatmap(m, 0), ConfigError);
}

// Oracle: recompute every bin from the raw keep flags.
TEST(Heatmap, BinsMatchDirectCount) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const NeuronLayout layout{2, 32};
    const NeuronMask m = select_random(layout, 0.01 + 0.99 * rng.uniform(), rng.below(1000));
    const std::size_t bin = 1 + rng.below(12);
    const HeatmapDensity h = heatmap(m, bin);
    std::size_t row = 0;
    for (int l = 0; l < 2; ++l)
      for (Role r : kRoles) {
        const auto& hr = h.rows[row++];
        ASSERT_EQ(hr.layer, l);
        ASSERT_EQ(hr.role, r);
        ASSERT_EQ(hr.bins.size(), (32 + bin - 1) / bin);
        for (std::size_t b = 0; b < hr.bins.size(); ++b) {
          const std::size_t lo = b * bin, hi = std::min<std::size_t>(32, lo + bin);
          double kept = 0.0;
          for (std::size_t u = lo; u < hi; ++u) kept += m.kept({l, r, static_cast<int>(u)});
          ASSERT_EQ(hr.bin_sizes[b], hi - lo);
          ASSERT_DOUBLE_EQ(hr.bins[b], kept / static_cast<double>(hi - lo));
        }
      }
    ASSERT_NEAR(h.weighted_mean(), m.kept_fraction(), 1e-12);
    if (32 % bin == 0 && (bin & (bin - 1)) == 0) ASSERT_EQ(h.weighted_mean(), m.kept_fraction());
  }
}

TEST(Heatmap, SvgAndCsvStructure) {
  const NeuronMask m = select_random({2, 32}, 0.1, 2);
  const HeatmapDensity h = heatmap(m, 8);
  const std::string svg = heatmap_svg(h, "ig 0.1");
  EXPECT_EQ(svg.rfind("<svg", 0) == 0 || svg.rfind("<?xml", 0) == 0, true);
  EXPECT_EQ(count(svg, "class=\"cell\""), 24u);
  EXPECT_EQ(count(svg, "L1/value"), 1u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  const auto lines = split_lines(heatmap_csv(h));
  EXPECT_EQ(lines[0], "layer,role,bin,density");
  EXPECT_EQ(lines.size(), 25u);
}

TEST(Report, EmitIsByteStable) {
  const Fixture f;
  const double fr[] = {0.5};
  const std::uint64_t seeds[] = {1, 2};
  ReportBundle bundle;
  bundle.grid = build_grid(f.params, f.test, f.act, f.ig, fr, seeds);
  bundle.heatmaps.push_back({SelectionMethod::IntegratedGradients, 0.5, heatmap(select_by_score(f.ig, 0.5), 4)});
  const auto root = std::filesystem::temp_directory_path() / "kprobe_report_test";
  std::filesystem::remove_all(root);
  const auto a = emit(bundle, root / "a");
  const auto b = emit(bundle, root / "b");
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].filename(), b[i].filename());
    EXPECT_EQ(read_file(a[i]), read_file(b[i]));
  }
  const auto j = nlohmann::json::parse(read_file(root / "a" / "report.json"));
  EXPECT_EQ(j.at("schema_version"), kReportSchemaVersion);
  EXPECT_EQ(j.at("heatmaps")[0].at("file"), heatmap_stem(SelectionMethod::IntegratedGradients, 0.5));
  EXPECT_EQ(heatmap_stem(SelectionMethod::Activation, 0.25), "heatmap_activation_0.25");
  std::filesystem::remove_all(root);
}

}  // namespace
}  // namespace kprobe

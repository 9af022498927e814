// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kprobe/attribution.h"
#include "kprobe/corpus.h"
#include "kprobe/model.h"
#include "kprobe/neuron.h"

namespace kprobe {

inline constexpr int kReportSchemaVersion = 1;

// Fraction of examples whose argmax class (ties to the lowest index) equals
// the label.
double accuracy(const Parameters& params, const Dataset& test_set);
double accuracy(const Parameters& params, const Dataset& test_set, const NeuronMask& mask);

// Method x preservation-fraction test accuracies.
struct AccuracyGrid {
  std::vector<SelectionMethod> methods;  // Random, Activation, IntegratedGradients
  std::vector<double> fractions;         // column order; fractions[0] == 1.0
  std::vector<std::vector<double>> cells;  // [method][fraction]
  std::vector<std::uint64_t> random_seeds;
  std::vector<std::vector<double>> random_per_seed;  // [fraction][seed]

  double at(SelectionMethod method, std::size_t fraction_index) const;
  friend bool operator==(const AccuracyGrid&, const AccuracyGrid&) = default;
};

// `fractions` with 1.0 prepended when missing. Each must lie in (0, 1].
std::vector<double> grid_fractions(std::span<const double> fractions);

// Evaluates every (method, fraction) submodel. Random cells average the
// submodels for each seed in `random_seeds`; the 1.0 column is the full
// model for every method.
AccuracyGrid build_grid(const Parameters& trained, const Dataset& test_set,
                        const ScoreTable& activation, const ScoreTable& integrated_gradients,
                        std::span<const double> fractions,
                        std::span<const std::uint64_t> random_seeds);

struct HeatmapRow {
  int layer = 0;
  Role role = Role::Query;
  std::vector<double> bins;            // mean keep label per bin
  std::vector<std::size_t> bin_sizes;  // last bin may be partial

  friend bool operator==(const HeatmapRow&, const HeatmapRow&) = default;
};

// Keep-label density over groups of `bin_size` adjacent units, one row per
// (layer, role).
struct HeatmapDensity {
  std::size_t bin_size = 0;
  std::vector<HeatmapRow> rows;

  std::size_t cell_count() const;
  // sum(bin * size) / sum(size).
  double weighted_mean() const;
  friend bool operator==(const HeatmapDensity&, const HeatmapDensity&) = default;
};

HeatmapDensity heatmap(const NeuronMask& mask, std::size_t bin_size);

struct HeatmapEntry {
  SelectionMethod method = SelectionMethod::Random;
  double fraction = 1.0;
  HeatmapDensity density;
};

struct ReportBundle {
  AccuracyGrid grid;
  std::vector<HeatmapEntry> heatmaps;
};

std::string grid_csv(const AccuracyGrid& grid);
std::string heatmap_csv(const HeatmapDensity& density);
std::string heatmap_svg(const HeatmapDensity& density, const std::string& title);
nlohmann::ordered_json report_json(const ReportBundle& bundle);
nlohmann::ordered_json grid_json(const AccuracyGrid& grid);
AccuracyGrid grid_from_json(const nlohmann::json& j);

// "heatmap_<method>_<fraction>" without extension.
std::string heatmap_stem(SelectionMethod method, double fraction);

// Writes grid.csv, heatmap_<method>_<fraction>.csv and .svg, and report.json.
// Output bytes depend only on `bundle`. Returns the written paths.
std::vector<std::filesystem::path> emit(const ReportBundle& bundle,
                                        const std::filesystem::path& out_dir);

}  // namespace kprobe

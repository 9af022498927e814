// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/report.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "kprobe/ablation.h"
#include "kprobe/errors.h"
#include "kprobe/io.h"
#include "kprobe/parallel.h"

namespace kprobe {
namespace {

constexpr SelectionMethod kGridMethods[] = {SelectionMethod::Random, SelectionMethod::Activation,
                                            SelectionMethod::IntegratedGradients};

double accuracy_impl(const Parameters& params, const Dataset& test_set, const NeuronMask* mask) {
  if (test_set.empty()) throw ConfigError("accuracy needs a nonempty test set");
  std::vector<int> hits(test_set.size());
  parallel_for(test_set.size(), [&](std::size_t i) {
    const auto& ex = test_set.examples[i];
    const Vector p = mask ? class_probabilities(params, ex.tokens, *mask)
                          : class_probabilities(params, ex.tokens);
    hits[i] = argmax(p) == ex.label;
  });
  std::size_t right = 0;
  for (int h : hits) right += static_cast<std::size_t>(h);
  return static_cast<double>(right) / static_cast<double>(test_set.size());
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Dark purple at density 0 to pale yellow at density 1.
std::string density_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int lo[3] = {38, 12, 66};
  const int hi[3] = {252, 240, 170};
  char buf[8];
  int c[3];
  for (int i = 0; i < 3; ++i) c[i] = static_cast<int>(std::lround(lo[i] + (hi[i] - lo[i]) * v));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

}  // namespace

double accuracy(const Parameters& params, const Dataset& test_set) {
  return accuracy_impl(params, test_set, nullptr);
}

double accuracy(const Parameters& params, const Dataset& test_set, const NeuronMask& mask) {
  return accuracy_impl(params, test_set, &mask);
}

double AccuracyGrid::at(SelectionMethod method, std::size_t fraction_index) const {
  for (std::size_t m = 0; m < methods.size(); ++m)
    if (methods[m] == method) return cells[m][fraction_index];
  throw ConfigError("method not in grid");
}

std::vector<double> grid_fractions(std::span<const double> fractions) {
  std::vector<double> out;
  if (std::find(fractions.begin(), fractions.end(), 1.0) == fractions.end()) out.push_back(1.0);
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in (0, 1]");
    out.push_back(f);
  }
  // 1.0 always leads.
  std::stable_partition(out.begin(), out.end(), [](double f) { return f == 1.0; });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

AccuracyGrid build_grid(const Parameters& trained, const Dataset& test_set,
                        const ScoreTable& activation, const ScoreTable& integrated_gradients,
                        std::span<const double> fractions,
                        std::span<const std::uint64_t> random_seeds) {
  const NeuronLayout layout = trained.config.neuron_layout();
  if (activation.method != SelectionMethod::Activation || activation.layout != layout)
    throw ConfigError("build_grid needs an activation score table for this model");
  if (integrated_gradients.method != SelectionMethod::IntegratedGradients ||
      integrated_gradients.layout != layout)
    throw ConfigError("build_grid needs an integrated-gradients score table for this model");
  if (random_seeds.empty()) throw ConfigError("build_grid needs at least one random seed");

  AccuracyGrid grid;
  grid.methods.assign(std::begin(kGridMethods), std::end(kGridMethods));
  grid.fractions = grid_fractions(fractions);
  grid.random_seeds.assign(random_seeds.begin(), random_seeds.end());
  grid.cells.assign(grid.methods.size(), std::vector<double>(grid.fractions.size(), 0.0));
  grid.random_per_seed.assign(grid.fractions.size(), {});

  const double full = accuracy(trained, test_set);
  for (std::size_t f = 0; f < grid.fractions.size(); ++f) {
    const double frac = grid.fractions[f];
    if (frac == 1.0) {
      for (auto& row : grid.cells) row[f] = full;
      grid.random_per_seed[f].assign(random_seeds.size(), full);
      continue;
    }
    double sum = 0.0;
    for (std::uint64_t seed : random_seeds) {
      const double a = accuracy(trained, test_set, select_random(layout, frac, seed));
      grid.random_per_seed[f].push_back(a);
      sum += a;
    }
    grid.cells[0][f] = sum / static_cast<double>(random_seeds.size());
    grid.cells[1][f] = accuracy(trained, test_set, select_by_score(activation, frac));
    grid.cells[2][f] = accuracy(trained, test_set, select_by_score(integrated_gradients, frac));
  }
  return grid;
}

std::size_t HeatmapDensity::cell_count() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.bins.size();
  return n;
}

double HeatmapDensity::weighted_mean() const {
  double num = 0.0;
  std::size_t den = 0;
  for (const auto& r : rows)
    for (std::size_t b = 0; b < r.bins.size(); ++b) {
      num += r.bins[b] * static_cast<double>(r.bin_sizes[b]);
      den += r.bin_sizes[b];
    }
  return num / static_cast<double>(den);
}

HeatmapDensity heatmap(const NeuronMask& mask, std::size_t bin_size) {
  if (bin_size < 1) throw ConfigError("bin_size must be >= 1");
  HeatmapDensity out;
  out.bin_size = bin_size;
  const auto width = static_cast<std::size_t>(mask.layout.width);
  for (int l = 0; l < mask.layout.num_layers; ++l)
    for (Role role : kRoles) {
      HeatmapRow row{l, role, {}, {}};
      for (std::size_t start = 0; start < width; start += bin_size) {
        const std::size_t end = std::min(width, start + bin_size);
        std::size_t kept = 0;
        for (std::size_t u = start; u < end; ++u)
          kept += mask.kept({l, role, static_cast<int>(u)}) ? 1 : 0;
        row.bins.push_back(static_cast<double>(kept) / static_cast<double>(end - start));
        row.bin_sizes.push_back(end - start);
      }
      out.rows.push_back(std::move(row));
    }
  return out;
}

std::string grid_csv(const AccuracyGrid& grid) {
  std::string out = "method,fraction,accuracy\n";
  for (std::size_t m = 0; m < grid.methods.size(); ++m)
    for (std::size_t f = 0; f < grid.fractions.size(); ++f)
      out += std::string(method_name(grid.methods[m])) + "," + format_short(grid.fractions[f]) +
             "," + format_double(grid.cells[m][f]) + "\n";
  return out;
}

std::string heatmap_csv(const HeatmapDensity& density) {
  std::string out = "layer,role,bin,density\n";
  for (const auto& r : density.rows)
    for (std::size_t b = 0; b < r.bins.size(); ++b)
      out += std::to_string(r.layer) + "," + std::string(role_name(r.role)) + "," +
             std::to_string(b) + "," + format_double(r.bins[b]) + "\n";
  return out;
}

std::string heatmap_svg(const HeatmapDensity& density, const std::string& title) {
  constexpr int kLabelW = 90, kCellW = 36, kCellH = 22, kTop = 34, kGap = 16, kSwatch = 24;
  std::size_t max_bins = 0;
  for (const auto& r : density.rows) max_bins = std::max(max_bins, r.bins.size());
  const int grid_w = static_cast<int>(max_bins) * kCellW;
  const int legend_w = 11 * kSwatch;
  const int width = kLabelW + std::max(grid_w, legend_w) + 20;
  const int grid_h = static_cast<int>(density.rows.size()) * kCellH;
  const int legend_y = kTop + grid_h + kGap;
  const int height = legend_y + kSwatch + 24;

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
       "\" height=\"" + std::to_string(height) + "\" font-family=\"monospace\" font-size=\"11\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(width) + "\" height=\"" +
       std::to_string(height) + "\" fill=\"#ffffff\"/>\n";
  s += "<text x=\"8\" y=\"20\" font-size=\"13\">" + title + "</text>\n";
  for (std::size_t r = 0; r < density.rows.size(); ++r) {
    const auto& row = density.rows[r];
    const int y = kTop + static_cast<int>(r) * kCellH;
    s += "<text class=\"row-label\" x=\"8\" y=\"" + std::to_string(y + 15) + "\">L" +
         std::to_string(row.layer) + "/" + std::string(role_name(row.role)) + "</text>\n";
    for (std::size_t b = 0; b < row.bins.size(); ++b) {
      const int x = kLabelW + static_cast<int>(b) * kCellW;
      s += "<rect class=\"cell\" x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) +
           "\" width=\"" + std::to_string(kCellW) + "\" height=\"" + std::to_string(kCellH) +
           "\" fill=\"" + density_color(row.bins[b]) + "\" stroke=\"#ffffff\"><title>" +
           fixed(row.bins[b], 3) + "</title></rect>\n";
    }
  }
  for (int i = 0; i <= 10; ++i) {
    const double v = i / 10.0;
    const int x = kLabelW + i * kSwatch;
    s += "<rect class=\"legend\" x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(legend_y) +
         "\" width=\"" + std::to_string(kSwatch) + "\" height=\"" + std::to_string(kSwatch / 2) +
         "\" fill=\"" + density_color(v) + "\"/>\n";
    if (i % 5 == 0)
      s += "<text class=\"legend-label\" x=\"" + std::to_string(x) + "\" y=\"" +
           std::to_string(legend_y + kSwatch / 2 + 12) + "\">" + fixed(v, 1) + "</text>\n";
  }
  s += "<text x=\"8\" y=\"" + std::to_string(legend_y + 10) + "\">density</text>\n";
  s += "</svg>\n";
  return s;
}

nlohmann::ordered_json grid_json(const AccuracyGrid& grid) {
  nlohmann::ordered_json methods = nlohmann::ordered_json::object();
  for (std::size_t m = 0; m < grid.methods.size(); ++m)
    methods[std::string(method_name(grid.methods[m]))] = grid.cells[m];
  return {{"fractions", grid.fractions},
          {"methods", std::move(methods)},
          {"random_seeds", grid.random_seeds},
          {"random_per_seed", grid.random_per_seed}};
}

AccuracyGrid grid_from_json(const nlohmann::json& j) {
  try {
    AccuracyGrid g;
    g.fractions = j.at("fractions").get<std::vector<double>>();
    for (auto m : kGridMethods) {
      g.methods.push_back(m);
      g.cells.push_back(j.at("methods").at(std::string(method_name(m))).get<std::vector<double>>());
    }
    g.random_seeds = j.at("random_seeds").get<std::vector<std::uint64_t>>();
    g.random_per_seed = j.at("random_per_seed").get<std::vector<std::vector<double>>>();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed accuracy grid: ") + e.what());
  }
}

std::string heatmap_stem(SelectionMethod method, double fraction) {
  return "heatmap_" + std::string(method_name(method)) + "_" + format_short(fraction);
}

nlohmann::ordered_json report_json(const ReportBundle& bundle) {
  nlohmann::ordered_json heatmaps = nlohmann::ordered_json::array();
  for (const auto& h : bundle.heatmaps) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : h.density.rows)
      rows.push_back({{"layer", r.layer},
                      {"role", role_name(r.role)},
                      {"bins", r.bins},
                      {"bin_sizes", r.bin_sizes}});
    heatmaps.push_back({{"method", method_name(h.method)},
                        {"fraction", h.fraction},
                        {"bin_size", h.density.bin_size},
                        {"file", heatmap_stem(h.method, h.fraction)},
                        {"weighted_mean_density", h.density.weighted_mean()},
                        {"rows", std::move(rows)}});
  }
  return {{"schema_version", kReportSchemaVersion},
          {"grid", grid_json(bundle.grid)},
          {"heatmaps", std::move(heatmaps)}};
}

std::vector<std::filesystem::path> emit(const ReportBundle& bundle,
                                        const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& body) {
    write_file(out_dir / name, body);
    written.push_back(out_dir / name);
  };
  put("grid.csv", grid_csv(bundle.grid));
  for (const auto& h : bundle.heatmaps) {
    const std::string stem = heatmap_stem(h.method, h.fraction);
    put(stem + ".csv", heatmap_csv(h.density));
    put(stem + ".svg",
        heatmap_svg(h.density, std::string(method_name(h.method)) + " selection, " +
                                   format_short(h.fraction * 100.0) + "% of Q/K/V neurons kept"));
  }
  put("report.json", report_json(bundle).dump(2) + "\n");
  return written;
}

}  // namespace kprobe

// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/ablation.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kprobe/errors.h"
#include "kprobe/io.h"
#include "kprobe/random.h"

namespace kprobe {

NeuronMask select_random(NeuronLayout layout, double fraction, std::uint64_t seed) {
  const std::size_t n = layout.size();
  const std::size_t k = kept_count_for(fraction, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  NeuronMask mask;
  mask.layout = layout;
  mask.keep.assign(n, 0);
  for (std::size_t i = 0; i < k; ++i) mask.keep[idx[i]] = 1;
  mask.preserved_fraction = fraction;
  mask.method = SelectionMethod::Random;
  mask.seed = seed;
  return mask;
}

NeuronMask select_by_score(const ScoreTable& scores, double fraction) {
  const std::size_t n = scores.layout.size();
  if (scores.scores.size() != n) throw ConfigError("score table does not cover every neuron");
  if (!all_finite(scores.scores)) throw ConfigError("score table has non-finite entries");
  const std::size_t k = kept_count_for(fraction, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores.scores[a] > scores.scores[b];
  });

  NeuronMask mask;
  mask.layout = scores.layout;
  mask.keep.assign(n, 0);
  for (std::size_t i = 0; i < k; ++i) mask.keep[order[i]] = 1;
  mask.preserved_fraction = fraction;
  mask.method = scores.method;
  return mask;
}

Parameters apply_mask(const Parameters& params, const NeuronMask& mask) {
  if (mask.layout != params.config.neuron_layout() || mask.keep.size() != mask.layout.size())
    throw ConfigError("neuron mask shape does not match the model");
  Parameters out = params;
  for (std::size_t i = 0; i < mask.keep.size(); ++i) {
    if (mask.keep[i]) continue;
    const NeuronId n = mask.layout.neuron(i);
    auto& layer = out.layers[static_cast<std::size_t>(n.layer)];
    const auto unit = static_cast<std::size_t>(n.unit);
    for (double& w : layer.projection(n.role).row(unit)) w = 0.0;
    layer.projection_bias(n.role)[unit] = 0.0;
  }
  return out;
}

std::string mask_csv(const NeuronMask& mask) {
  std::string out = "layer,role,unit,keep\n";
  for (std::size_t i = 0; i < mask.keep.size(); ++i) {
    const NeuronId n = mask.layout.neuron(i);
    out += std::to_string(n.layer) + "," + std::string(role_name(n.role)) + "," +
           std::to_string(n.unit) + "," + (mask.keep[i] ? "1" : "0") + "\n";
  }
  return out;
}

nlohmann::json mask_metadata(const NeuronMask& mask) {
  nlohmann::json j = {{"method", method_name(mask.method)},
                      {"num_layers", mask.layout.num_layers},
                      {"width", mask.layout.width},
                      {"num_neurons", mask.layout.size()},
                      {"preserved_fraction", mask.preserved_fraction},
                      {"kept", mask.kept_count()}};
  j["seed"] = mask.seed ? nlohmann::json(*mask.seed) : nlohmann::json(nullptr);
  return j;
}

NeuronMask parse_mask(std::string_view csv, const nlohmann::json& metadata) {
  NeuronMask mask;
  try {
    mask.method = method_from_name(metadata.at("method").get<std::string>());
    mask.layout = {metadata.at("num_layers").get<int>(), metadata.at("width").get<int>()};
    mask.preserved_fraction = metadata.at("preserved_fraction").get<double>();
    if (!metadata.at("seed").is_null()) mask.seed = metadata.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed mask metadata: ") + e.what());
  }
  const auto lines = split_lines(csv);
  if (lines.empty() || lines[0] != "layer,role,unit,keep") throw IoError("bad mask CSV header");
  mask.keep.assign(mask.layout.size(), 2);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 4 || (f[3] != "0" && f[3] != "1")) throw IoError("bad mask CSV row: " + lines[i]);
    const NeuronId n{std::stoi(f[0]), role_from_name(f[1]), std::stoi(f[2])};
    if (!mask.layout.contains(n)) throw IoError("mask CSV neuron out of range: " + lines[i]);
    mask.keep[mask.layout.index(n)] = f[3] == "1" ? 1 : 0;
  }
  if (std::find(mask.keep.begin(), mask.keep.end(), 2) != mask.keep.end())
    throw IoError("mask CSV does not cover every neuron");
  if (metadata.contains("kept") && metadata.at("kept").get<std::size_t>() != mask.kept_count())
    throw IoError("mask CSV kept count disagrees with its metadata");
  return mask;
}

}  // namespace kprobe

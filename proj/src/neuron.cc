// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/neuron.h"

#include <algorithm>
#include <cmath>

#include "kprobe/errors.h"

namespace kprobe {

std::string_view role_name(Role role) {
  switch (role) {
    case Role::Query: return "query";
    case Role::Key: return "key";
    case Role::Value: return "value";
  }
  return "?";
}

Role role_from_name(std::string_view name) {
  for (Role r : kRoles)
    if (role_name(r) == name) return r;
  throw ConfigError("unknown role '" + std::string(name) + "'");
}

std::string_view method_name(SelectionMethod method) {
  switch (method) {
    case SelectionMethod::Random: return "random";
    case SelectionMethod::Activation: return "activation";
    case SelectionMethod::IntegratedGradients: return "integrated_gradients";
    case SelectionMethod::Manual: return "manual";
  }
  return "?";
}

SelectionMethod method_from_name(std::string_view name) {
  for (auto m : {SelectionMethod::Random, SelectionMethod::Activation,
                 SelectionMethod::IntegratedGradients, SelectionMethod::Manual})
    if (method_name(m) == name) return m;
  throw ConfigError("unknown selection method '" + std::string(name) + "'");
}

NeuronMask NeuronMask::all_keep(NeuronLayout layout) {
  NeuronMask m;
  m.layout = layout;
  m.keep.assign(layout.size(), 1);
  m.preserved_fraction = 1.0;
  return m;
}

std::size_t NeuronMask::kept_count() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

double NeuronMask::kept_fraction() const {
  return static_cast<double>(kept_count()) / static_cast<double>(keep.size());
}

std::size_t kept_count_for(double fraction, std::size_t total) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("preservation fraction must lie in (0, 1]");
  const double x = fraction * static_cast<double>(total);
  const double nearest = std::round(x);
  const double k = std::abs(x - nearest) < 1e-9 ? nearest : std::ceil(x);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), total == 0 ? 0 : 1, total);
}

}  // namespace kprobe

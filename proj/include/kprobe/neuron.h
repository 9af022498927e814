// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kprobe {

// The three self-attention projections whose output units are probed.
enum class Role : int { Query = 0, Key = 1, Value = 2 };

inline constexpr int kNumRoles = 3;
inline constexpr Role kRoles[] = {Role::Query, Role::Key, Role::Value};

std::string_view role_name(Role role);
Role role_from_name(std::string_view name);

// Output unit `unit` of the `role` projection in `layer`.
struct NeuronId {
  int layer = 0;
  Role role = Role::Query;
  int unit = 0;

  friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

// Shape of the neuron population: num_layers x 3 roles x width units.
// Canonical order is (layer, role, unit) ascending.
struct NeuronLayout {
  int num_layers = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(num_layers) * kNumRoles * static_cast<std::size_t>(width);
  }
  std::size_t index(const NeuronId& n) const {
    return (static_cast<std::size_t>(n.layer) * kNumRoles + static_cast<std::size_t>(n.role)) *
               static_cast<std::size_t>(width) +
           static_cast<std::size_t>(n.unit);
  }
  NeuronId neuron(std::size_t index) const {
    const auto w = static_cast<std::size_t>(width);
    return {static_cast<int>(index / (kNumRoles * w)),
            static_cast<Role>((index / w) % kNumRoles), static_cast<int>(index % w)};
  }
  bool contains(const NeuronId& n) const {
    return n.layer >= 0 && n.layer < num_layers && n.unit >= 0 && n.unit < width &&
           static_cast<int>(n.role) >= 0 && static_cast<int>(n.role) < kNumRoles;
  }

  friend bool operator==(const NeuronLayout&, const NeuronLayout&) = default;
};

enum class SelectionMethod { Random, Activation, IntegratedGradients, Manual };

std::string_view method_name(SelectionMethod method);
SelectionMethod method_from_name(std::string_view name);

// Keep/ablate flag for every neuron in canonical order.
struct NeuronMask {
  NeuronLayout layout;
  std::vector<std::uint8_t> keep;
  double preserved_fraction = 1.0;
  SelectionMethod method = SelectionMethod::Manual;
  std::optional<std::uint64_t> seed;

  static NeuronMask all_keep(NeuronLayout layout);

  bool kept(const NeuronId& n) const { return keep[layout.index(n)] != 0; }
  std::size_t kept_count() const;
  // kept_count() / N, the realized fraction.
  double kept_fraction() const;

  friend bool operator==(const NeuronMask&, const NeuronMask&) = default;
};

// Number of neurons kept at `fraction`: ceil(fraction * total), where a
// product within 1e-9 of an integer counts as that integer, clamped to
// [1, total].
std::size_t kept_count_for(double fraction, std::size_t total);

}  // namespace kprobe

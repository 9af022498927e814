// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "kprobe/attribution.h"
#include "kprobe/model.h"
#include "kprobe/neuron.h"

namespace kprobe {

// Uniform sample without replacement of kept_count_for(fraction, N) neurons.
NeuronMask select_random(NeuronLayout layout, double fraction, std::uint64_t seed);

// Keeps the kept_count_for(fraction, N) highest scores; ties go to the
// earlier neuron in canonical (layer, role, unit) order.
NeuronMask select_by_score(const ScoreTable& scores, double fraction);

// Copy of `params` with every dropped neuron's incoming row and bias entry set
// to +0.0. All other values are bit-identical to the input.
Parameters apply_mask(const Parameters& params, const NeuronMask& mask);

// CSV body: layer,role,unit,keep with keep in {0,1}, canonical order.
std::string mask_csv(const NeuronMask& mask);
// Sidecar: layout, method, preserved_fraction, kept count and seed.
nlohmann::json mask_metadata(const NeuronMask& mask);
NeuronMask parse_mask(std::string_view csv, const nlohmann::json& metadata);

}  // namespace kprobe

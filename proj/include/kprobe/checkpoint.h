// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "kprobe/model.h"

namespace kprobe {

// A checkpoint is a JSON manifest plus a base64 blob stored next to it.
//
// manifest: {"format": "kprobe-checkpoint", "version": 1, "config": {...},
//            "blob": "<file name>", "dtype": "f64le", "num_values": N,
//            "tensors": [{"name", "shape", "offset"}, ...]}
// blob:     base64 of all tensor values as little-endian IEEE-754 binary64,
//           row-major, concatenated in manifest order. `offset` counts values.
struct CheckpointText {
  std::string manifest;
  std::string blob;
};

CheckpointText encode_checkpoint(const Parameters& params, std::string_view blob_name);
Parameters decode_checkpoint(std::string_view manifest, std::string_view blob);

// Writes `path` (manifest) and `path` + ".b64" (blob).
void save_checkpoint(const Parameters& params, const std::filesystem::path& path);
Parameters load_checkpoint(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace kprobe

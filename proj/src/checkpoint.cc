// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/checkpoint.h"

#include <array>
#include <bit>
#include <cstring>

#include "kprobe/errors.h"
#include "kprobe/io.h"

namespace kprobe {
namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

void put_f64le(double v, std::string& out) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto n = (static_cast<unsigned char>(bytes[i]) << 16) |
                   (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                   static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  if (i < bytes.size()) {
    unsigned n = static_cast<unsigned char>(bytes[i]) << 16;
    const bool two = i + 1 < bytes.size();
    if (two) n |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += two ? kAlphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kAlphabet[i])] = i;

  std::string out;
  unsigned acc = 0;
  int bits = 0;
  std::size_t pad = 0;
  for (char ch : text) {
    if (ch == '\n' || ch == '\r' || ch == ' ') continue;
    if (ch == '=') {
      ++pad;
      continue;
    }
    if (pad > 0) throw IoError("base64: data after padding");
    const int v = lut[static_cast<unsigned char>(ch)];
    if (v < 0) throw IoError("base64: invalid character");
    acc = (acc << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xff));
    }
  }
  if (pad > 2) throw IoError("base64: bad padding");
  return out;
}

CheckpointText encode_checkpoint(const Parameters& params, std::string_view blob_name) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string raw;
  std::size_t offset = 0;
  params.for_each_tensor([&](const std::string& name, const std::vector<std::size_t>& shape,
                             std::span<const double> values) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
    for (double v : values) put_f64le(v, raw);
    offset += values.size();
  });
  nlohmann::json manifest = {{"format", "kprobe-checkpoint"},
                             {"version", 1},
                             {"config", params.config},
                             {"blob", blob_name},
                             {"dtype", "f64le"},
                             {"num_values", offset},
                             {"tensors", std::move(tensors)}};
  return {manifest.dump(2) + "\n", base64_encode(raw) + "\n"};
}

Parameters decode_checkpoint(std::string_view manifest_text, std::string_view blob) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "kprobe-checkpoint" || manifest.value("version", 0) != 1)
    throw IoError("not a kprobe v1 checkpoint");

  Parameters params = Parameters::zeros(manifest.at("config").get<ModelConfig>());
  const std::string raw = base64_decode(blob);
  const auto& tensors = manifest.at("tensors");
  std::size_t index = 0;
  params.for_each_tensor([&](const std::string& name, const std::vector<std::size_t>& shape,
                             std::span<double> values) {
    if (index >= tensors.size()) throw IoError("checkpoint is missing tensor " + name);
    const auto& t = tensors[index++];
    if (t.at("name").get<std::string>() != name ||
        t.at("shape").get<std::vector<std::size_t>>() != shape)
      throw IoError("checkpoint tensor mismatch at " + name);
    const auto offset = t.at("offset").get<std::size_t>();
    if ((offset + values.size()) * 8 > raw.size())
      throw IoError("checkpoint blob too short for " + name);
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data()) + offset * 8;
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_f64le(p + 8 * i);
  });
  if (index != tensors.size()) throw IoError("checkpoint has unexpected extra tensors");
  return params;
}

void save_checkpoint(const Parameters& params, const std::filesystem::path& path) {
  const auto blob_path = std::filesystem::path(path.string() + ".b64");
  const auto text = encode_checkpoint(params, blob_path.filename().string());
  write_file(path, text.manifest);
  write_file(blob_path, text.blob);
}

Parameters load_checkpoint(const std::filesystem::path& path) {
  const std::string manifest = read_file(path);
  std::string blob_name;
  try {
    blob_name = nlohmann::json::parse(manifest).at("blob").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
  return decode_checkpoint(manifest, read_file(path.parent_path() / blob_name));
}

}  // namespace kprobe

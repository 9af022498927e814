// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace kprobe {

std::string read_file(const std::filesystem::path& path);

// Writes `contents` byte-for-byte, creating parent directories.
void write_file(const std::filesystem::path& path, std::string_view contents);

// 17 significant digits, enough to round-trip any double.
std::string format_double(double v);

// Shortest decimal that round-trips, for labels and file names ("0.5", "0.01").
std::string format_short(double v);

std::vector<std::string> split_csv_line(std::string_view line);
std::vector<std::string> split_lines(std::string_view text);

}  // namespace kprobe

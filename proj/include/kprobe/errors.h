// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kprobe {

// Invalid configuration or argument.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN or infinity appeared in a forward, backward or training computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure reading or writing an artifact (corrupt file, unwritable dir).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage needs a file produced by an earlier stage.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(std::string path, std::string producer)
      : std::runtime_error("missing artifact " + path + " (run `kprobe " + producer +
                           "` first)"),
        path_(std::move(path)),
        producer_(std::move(producer)) {}

  const std::string& path() const { return path_; }
  const std::string& producer() const { return producer_; }

 private:
  std::string path_;
  std::string producer_;
};

}  // namespace kprobe

// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "shira/nn.hpp"
#include "shira/task.hpp"
#include "shira/train.hpp"

namespace shira::cli {

struct ModelSpec {
  std::vector<std::size_t> widths{128, 128, 128, 16};
  Activation hidden = Activation::relu;
  std::uint64_t seed = 42;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

struct NamedStyle {
  std::string name;
  StyleConfig style;
};

/// Everything a command needs. Every section is optional in the file;
/// unknown keys anywhere are a ConfigError.
struct CliConfig {
  TaskConfig task;
  ModelSpec model;
  TrainConfig pretrain;
  TrainConfig train;
  /// Learning rate for the sparse strategies; `train.lr` drives lora/full.
  double shira_lr = 1e-2;
  StyleConfig style;
  std::vector<NamedStyle> tasks;
  std::string output_dir = "shira_out";

  CliConfig();
  void validate() const;
  nlohmann::json to_json() const;
  static CliConfig from_json(const nlohmann::json& j);
  static CliConfig load(const std::filesystem::path& path);
};

/// SHIRA_THREADS, default 1. ConfigError unless a positive integer.
std::size_t thread_cap();

}  // namespace shira::cli

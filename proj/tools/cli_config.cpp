// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli_config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "shira/error.hpp"

namespace shira::cli {
namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError(section + ": unknown key '" + key + "'");
  }
}

TrainConfig default_pretrain() {
  TrainConfig c;
  c.steps = 1500;
  c.lr = 2e-3;
  c.seed = 5;
  return c;
}

TrainConfig default_train() {
  TrainConfig c;
  c.steps = 500;
  c.lr = 1e-3;
  c.seed = 9;
  return c;
}

std::vector<NamedStyle> default_tasks() {
  StyleConfig a;
  a.planes = 16;
  a.permuted_classes = 4;
  a.seed = 1000;
  StyleConfig b = a;
  b.seed = 1001;
  return {{"style_a", a}, {"style_b", b}};
}

}  // namespace

nlohmann::json ModelSpec::to_json() const {
  return {{"widths", widths}, {"hidden", std::string(shira::to_string(hidden))}, {"seed", seed}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"widths", "hidden", "seed"}, "model");
  ModelSpec m;
  m.widths = j.value("widths", m.widths);
  if (j.contains("hidden")) {
    try {
      m.hidden = parse_activation(j.at("hidden").get<std::string>());
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  }
  m.seed = j.value("seed", m.seed);
  return m;
}

CliConfig::CliConfig()
    : pretrain(default_pretrain()), train(default_train()), tasks(default_tasks()) {
  style = tasks.front().style;
}

void CliConfig::validate() const {
  pretrain.validate();
  train.validate();
  if (model.widths.empty()) throw ConfigError("model: widths must not be empty");
  if (std::find(model.widths.begin(), model.widths.end(), 0u) != model.widths.end())
    throw ConfigError("model: widths must be positive");
  if (model.widths.back() != task.classes) {
    throw ConfigError("model: last width " + std::to_string(model.widths.back()) +
                      " must equal task classes " + std::to_string(task.classes));
  }
  make_style_transform(task, style);
  for (const NamedStyle& t : tasks) {
    if (t.name.empty()) throw ConfigError("tasks: every entry needs a name");
    make_style_transform(task, t.style);
  }
  if (!(shira_lr > 0.0) || !std::isfinite(shira_lr)) throw ConfigError("shira_lr must be positive");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

nlohmann::json CliConfig::to_json() const {
  nlohmann::json ts = nlohmann::json::array();
  for (const NamedStyle& t : tasks) ts.push_back({{"name", t.name}, {"style", t.style.to_json()}});
  return {{"task", task.to_json()},   {"model", model.to_json()},
          {"pretrain", pretrain.to_json()}, {"train", train.to_json()},
          {"shira_lr", shira_lr},       {"style", style.to_json()}, {"tasks", ts},
          {"output_dir", output_dir}};
}

CliConfig CliConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"task", "model", "pretrain", "train", "shira_lr", "style", "tasks", "output_dir"},
                 "config");
  CliConfig c;
  if (j.contains("task")) c.task = TaskConfig::from_json(j.at("task"));
  if (j.contains("model")) c.model = ModelSpec::from_json(j.at("model"));
  if (j.contains("pretrain")) c.pretrain = TrainConfig::from_json(j.at("pretrain"));
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("style")) c.style = StyleConfig::from_json(j.at("style"));
  if (j.contains("tasks")) {
    if (!j.at("tasks").is_array()) throw ConfigError("tasks: expected an array");
    c.tasks.clear();
    for (const auto& t : j.at("tasks")) {
      reject_unknown(t, {"name", "style"}, "tasks[]");
      c.tasks.push_back({t.value("name", std::string{}),
                         t.contains("style") ? StyleConfig::from_json(t.at("style"))
                                             : StyleConfig{}});
    }
  }
  c.shira_lr = j.value("shira_lr", c.shira_lr);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.validate();
  return c;
}

CliConfig CliConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return from_json(j);
}

std::size_t thread_cap() {
  const char* env = std::getenv("SHIRA_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(std::string("SHIRA_THREADS='") + env + "' is not a positive integer");
  return static_cast<std::size_t>(v);
}

}  // namespace shira::cli

// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "shira/linalg.hpp"
#include "shira/nn.hpp"

namespace shira {

/// Synthetic Gaussian-cluster classification: one center per class, samples
/// are center + isotropic noise.
struct TaskConfig {
  std::size_t input_dim = 32;
  std::size_t classes = 16;
  std::size_t train_samples = 4096;
  std::size_t test_samples = 2048;
  double center_scale = 1.0;
  double noise = 0.6;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static TaskConfig from_json(const nlohmann::json& j);
};

/// A "style": a fixed orthogonal rotation of the inputs (Givens rotations
/// by `angle` radians in `planes` disjoint random coordinate planes) plus a
/// cyclic relabeling of `permuted_classes` random classes.
///
/// With `slots` > 1 the planes and classes come from block `slot` of a
/// shuffle drawn from `pool_seed`, so styles in different slots touch
/// disjoint input planes and classes.
struct StyleConfig {
  std::uint64_t seed = 11;
  double angle = 0.8;
  std::size_t planes = 16;
  std::size_t permuted_classes = 16;
  std::size_t slot = 0;
  std::size_t slots = 1;
  std::uint64_t pool_seed = 0;

  nlohmann::json to_json() const;
  static StyleConfig from_json(const nlohmann::json& j);
};

struct TaskData {
  Batch train;
  Batch test;
};

struct StyleTransform {
  DenseMatrix rotation;                 // input_dim x input_dim, orthogonal
  std::vector<std::size_t> relabel;     // old class -> new class
};

StyleTransform make_style_transform(const TaskConfig& task,
                                    const StyleConfig& style);

TaskData make_base_task(const TaskConfig& task);
TaskData make_style_task(const TaskConfig& task, const StyleConfig& style);

/// `count` rows drawn uniformly with replacement.
Batch sample_batch(const Batch& data, std::size_t count, Rng& rng);
/// First `count` rows (or all of them if fewer).
Batch head_batch(const Batch& data, std::size_t count);
/// Rows [start, start + count).
Batch slice_batch(const Batch& data, std::size_t start, std::size_t count);

}  // namespace shira

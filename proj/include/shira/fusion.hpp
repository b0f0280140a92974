// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "shira/adapter.hpp"
#include "shira/nn.hpp"

namespace shira {

/// Naive weighted sum of sparse adapters over the union of their supports.
/// Each adapter's alpha_default is folded into its values, so the result
/// has alpha_default 1. Colliding coords are summed in list order, or
/// rejected with IntegrityError when `strict`. Empty `weights` means all 1.
SparseModelAdapter fuse_multi(std::span<const SparseModelAdapter> adapters,
                              std::span<const double> weights = {},
                              bool strict = false);
/// Same over the variant; InvalidArgument if any adapter is LoRA.
SparseModelAdapter fuse_multi(std::span<const ModelAdapter> adapters,
                              std::span<const double> weights = {},
                              bool strict = false);

/// LoRA fusion by factor concatenation: the fused delta equals the weighted
/// sum of the individual deltas and has rank at most the summed ranks.
/// A layer whose summed rank exceeds min(n, m) is stored as an identity
/// factor times the dense fused delta.
LoraModelAdapter fuse_multi_lora(std::span<const LoraModelAdapter> adapters,
                                 std::span<const double> weights = {});

/// Pairwise interference of two same-shape n x m deltas through the m x m
/// product S1^T S2.
struct Interference {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t support1 = 0;
  std::size_t support2 = 0;
  std::size_t overlap = 0;     // coords present in both
  std::size_t union_size = 0;  // support1 + support2 - overlap
  double overlap_fraction = 0.0;  // overlap / (rows * cols)
  std::size_t product_structural_nnz = 0;  // entries reached by any pair
  std::size_t product_nnz = 0;             // entries numerically nonzero
  double product_density = 0.0;            // product_nnz / cols^2
  double product_frobenius = 0.0;

  nlohmann::json to_json() const;
};

/// Sparse-aware: only rows in both supports contribute.
Interference interference(const SparseAdapter& a1, const SparseAdapter& a2);
/// Dense product of the two fused LoRA deltas.
Interference interference(const LoraAdapter& a1, const LoraAdapter& a2);

struct FusionReport {
  std::vector<std::string> sources;
  std::vector<double> weights;
  std::map<std::uint32_t, Interference> sparse;
  std::map<std::uint32_t, Interference> lora;

  nlohmann::json to_json() const;
};

/// Interference for every layer the two sparse adapters share, plus the
/// LoRA pair when given.
FusionReport fusion_report(const SparseModelAdapter& a1,
                           const SparseModelAdapter& a2,
                           const LoraModelAdapter* lora1 = nullptr,
                           const LoraModelAdapter* lora2 = nullptr);

struct TaskEval {
  std::string name;
  Batch test;
  std::optional<double> single_accuracy;
};

struct MultiEvalReport {
  struct Entry {
    std::string name;
    double single = 0.0;
    double fused = 0.0;
  };
  std::vector<Entry> tasks;
  double avg_single = 0.0;
  double avg_fused = 0.0;
  double drop_points = 0.0;   // 100 * (avg_single - avg_fused)
  double drop_percent = 0.0;  // drop relative to avg_single, in percent

  nlohmann::json to_json() const;
};

/// Loads `fused` at `alpha` on a runtime over `model` and evaluates each
/// task. InvalidArgument on an empty taskset, a task without a
/// single-adapter baseline, or non-class targets.
MultiEvalReport eval_multi(const Mlp& model, const ModelAdapter& fused,
                           std::span<const TaskEval> tasks, double alpha = 1.0);

/// Accuracy of `model` on a classification batch.
double class_accuracy(const Mlp& model, const Batch& batch);

}  // namespace shira

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
#include "shira/mask.hpp"
#include "shira/nn.hpp"

namespace shira {

enum class OptimizerKind : std::uint8_t { sgd, adam };
enum class LrSchedule : std::uint8_t { constant, linear_decay };
/// sparse_state keeps optimizer moments only for mask coords; dense_hook
/// masks dense gradients and runs a dense optimizer over the whole tensor.
enum class MaskingPath : std::uint8_t { sparse_state, dense_hook };

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch_size = 64;
  std::size_t accumulation = 1;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  AdamParams adam;
  LrSchedule schedule = LrSchedule::linear_decay;
  LossKind loss = LossKind::softmax_ce;
  std::uint64_t seed = 0;
  std::vector<std::size_t> adapted_layers;  // empty: every layer
  bool train_bias = false;

  MaskStrategy mask_strategy = MaskStrategy::weight_magnitude;
  double mask_fraction = 0.02;
  bool struct_diagonal = true;
  MaskingPath masking = MaskingPath::sparse_state;
  std::size_t calib_batches = 8;
  std::size_t calib_batch_size = 64;

  std::size_t lora_rank = 16;
  double lora_alpha = 2.0;

  void validate() const;
  double lr_at(std::size_t step) const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
  /// Hex FNV-1a of the canonical JSON dump.
  std::string digest() const;
};

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  std::size_t changed = 0;
};

/// Optimizer-state floats actually held versus what a dense optimizer over
/// the same tensors would hold.
struct StateAccounting {
  std::size_t dense_equivalent_floats = 0;
  std::size_t held_floats = 0;
};

struct TrainReport {
  std::string method;
  std::vector<double> loss_curve;
  std::map<std::string, double> metrics;
  ParamCounts params;
  StateAccounting state;
  nlohmann::json config;

  nlohmann::json to_json() const;
};

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalMetrics evaluate(const Mlp& model, const Batch& data, LossKind kind);

/// Hadamard masking: adapted layers keep on-mask entries bit for bit and
/// get exact +0.0 elsewhere; layers without a mask and all biases are zeroed.
GradientSet mask_gradients(const GradientSet& grads, const ModelMask& mask);

struct SparseLayerState {
  std::vector<double> m;
  std::vector<double> v;
};

/// Adam moments aligned 1:1 with mask coords.
struct SparseOptimState {
  std::map<std::size_t, SparseLayerState> layers;
  std::uint64_t step = 0;

  static SparseOptimState for_mask(const ModelMask& mask);
  std::size_t float_count() const noexcept;
};

struct DenseAdamState {
  std::vector<double> m;
  std::vector<double> v;

  explicit DenseAdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam on the coords only; `step` is 1-based.
void adam_sparse_step(SparseLayerState& state, DenseMatrix& weight,
                      std::span<const Coord> coords,
                      std::span<const double> coord_grads, double lr,
                      const AdamParams& params, std::uint64_t step);

void adam_dense_step(DenseAdamState& state, std::span<double> params_out,
                     std::span<const double> grads, double lr,
                     const AdamParams& params, std::uint64_t step);

/// Builds the mask the config asks for (struct/rand/wm/grad/snip).
ModelMask build_mask(const Mlp& model, const TrainConfig& cfg,
                     const Batch& train);

struct ShiraResult {
  Mlp model;
  SparseModelAdapter adapter;
  TrainReport report;
};

ShiraResult train_shira(const Mlp& model, const ModelMask& mask,
                        const Batch& train, const TrainConfig& cfg,
                        const Batch* eval = nullptr);

/// Base model plus unfused low-rank branches: y = W x + alpha (A (B x)) + b.
struct LoraMlp {
  Mlp base;
  std::map<std::uint32_t, LoraAdapter> factors;

  DenseMatrix predict(const DenseMatrix& inputs) const;
  Mlp fused() const;
  LoraModelAdapter adapter() const;
};

struct LoraGradients {
  std::map<std::uint32_t, DenseMatrix> a;
  std::map<std::uint32_t, DenseMatrix> b;
};

/// Gradients of the mean loss with respect to every LoRA factor, base
/// weights held fixed.
LoraGradients lora_gradients(const LoraMlp& net, const Batch& batch,
                             LossKind kind);

struct LoraResult {
  LoraMlp model;
  LoraModelAdapter adapter;
  TrainReport report;
};

LoraResult train_lora(const Mlp& model, const Batch& train,
                      const TrainConfig& cfg, const Batch* eval = nullptr);

struct DenseResult {
  Mlp model;
  TrainReport report;
};

DenseResult train_full(const Mlp& model, const Batch& train,
                       const TrainConfig& cfg, const Batch* eval = nullptr);
DenseResult train_frozen(const Mlp& model, const Batch& train,
                         const TrainConfig& cfg, const Batch* eval = nullptr);

/// Number of weight/bias entries whose bits differ.
std::size_t count_changed(const Mlp& before, const Mlp& after);

}  // namespace shira

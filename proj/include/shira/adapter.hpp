// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "shira/linalg.hpp"
#include "shira/mask.hpp"
#include "shira/nn.hpp"

namespace shira {

/// Sparse delta S on a fixed support. Values are deltas, never absolute
/// weights, so the same adapter applies to any compatible base.
struct SparseAdapter {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<Coord> coords;
  std::vector<double> values;
  double alpha_default = 1.0;
  MaskStrategy strategy = MaskStrategy::custom;
  std::uint32_t source_layer = 0;

  Shape shape() const noexcept { return {rows, cols}; }
  std::size_t nnz() const noexcept { return coords.size(); }
  double density() const noexcept;
  void validate() const;

  bool operator==(const SparseAdapter&) const = default;
};

/// Low-rank pair; fused delta is alpha_lora * a * b.
struct LoraAdapter {
  DenseMatrix a;  // n x r
  DenseMatrix b;  // r x m
  double alpha_lora = 2.0;

  std::size_t rank() const noexcept { return a.cols(); }
  Shape shape() const noexcept { return {a.rows(), b.cols()}; }
  void validate() const;

  bool operator==(const LoraAdapter&) const = default;
};

struct SparseModelAdapter {
  std::map<std::uint32_t, SparseAdapter> layers;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t total_nnz() const noexcept;
  bool operator==(const SparseModelAdapter&) const = default;
};

struct LoraModelAdapter {
  std::map<std::uint32_t, LoraAdapter> layers;
  nlohmann::json meta = nlohmann::json::object();

  bool operator==(const LoraModelAdapter&) const = default;
};

using ModelAdapter = std::variant<SparseModelAdapter, LoraModelAdapter>;

/// Throws ShapeError unless every adapted layer exists and matches in shape.
void validate_against(const SparseModelAdapter& adapter, const Mlp& model);
void validate_against(const LoraModelAdapter& adapter, const Mlp& model);
void validate_against(const ModelAdapter& adapter, const Mlp& model);

/// S = w_new - w_base on the mask. Any off-mask difference is an
/// IntegrityError: it means the gradient masking leaked.
SparseAdapter extract_sparse(const DenseMatrix& w_base,
                             const DenseMatrix& w_new, const Mask& mask);

/// w with w[c] + alpha * value at each adapter coord.
DenseMatrix apply_sparse(const DenseMatrix& w, const SparseAdapter& adapter,
                         double alpha);

/// w + alpha * alpha_lora * (a * b).
DenseMatrix fuse_lora(const DenseMatrix& w, const LoraAdapter& adapter,
                      double alpha);

/// Dense delta at alpha = 1.
DenseMatrix delta_dense(const SparseAdapter& adapter);
DenseMatrix delta_dense(const LoraAdapter& adapter);

/// Offline materialization of base + alpha * adapter.
Mlp apply_to_model(const Mlp& model, const ModelAdapter& adapter, double alpha);

/// Storage in f64 values: sparse counts values plus two u32 per coord
/// (expressed in value-equivalents), LoRA counts r * (n + m).
struct StorageCount {
  std::size_t values = 0;
  std::size_t index_words = 0;  // u32 words for coords
};
StorageCount storage_count(const SparseModelAdapter& adapter);
StorageCount storage_count(const LoraModelAdapter& adapter);

}  // namespace shira

// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "shira/linalg.hpp"
#include "shira/nn.hpp"

namespace shira {

/// (row, col) position inside a weight matrix. Ordering is row-major.
struct Coord {
  std::uint32_t row = 0;
  std::uint32_t col = 0;

  auto operator<=>(const Coord&) const = default;
};

/// Throws unless coords are strictly increasing row-major and inside shape.
void validate_coords(std::span<const Coord> coords, Shape shape);

/// Binary trainability mask stored as its sorted support.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t rows, std::size_t cols, std::vector<Coord> coords);

  /// Every entry selected.
  static Mask full(std::size_t rows, std::size_t cols);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  Shape shape() const noexcept { return {rows_, cols_}; }
  std::size_t size() const noexcept { return coords_.size(); }
  std::span<const Coord> coords() const noexcept { return coords_; }
  double density() const noexcept;
  bool contains(Coord c) const noexcept;

  bool operator==(const Mask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Coord> coords_;
};

/// Per-layer trainable fraction; counts round down.
class MaskBudget {
 public:
  explicit MaskBudget(double fraction);

  double fraction() const noexcept { return fraction_; }
  /// floor(fraction * rows * cols)
  std::size_t count(Shape shape) const noexcept;

 private:
  double fraction_;
};

/// Masks for the adapted layers of a model, keyed by layer index.
struct ModelMask {
  std::map<std::size_t, Mask> layers;

  std::size_t total_size() const noexcept;
  /// Throws ShapeError if a layer index or shape does not fit the model.
  void validate_against(const Mlp& model) const;
  bool operator==(const ModelMask&) const = default;
};

enum class MaskStrategy : std::uint8_t {
  structured = 0,
  random = 1,
  weight_magnitude = 2,
  gradient = 3,
  snip = 4,
  fused = 5,
  custom = 255,
};

std::string_view to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(std::string_view name);
bool is_known_strategy(std::uint8_t value) noexcept;

/// Selects the k highest scores; ties go to the lowest row-major index.
Mask top_k_mask(const DenseMatrix& scores, std::size_t k);

/// Evenly spaced full rows (stride floor(n/k) from row 0) plus, optionally,
/// the main diagonal.
Mask make_struct_mask(Shape shape, MaskBudget budget,
                      bool include_diagonal = true);
/// Same, with an explicit row count instead of one derived from the budget.
Mask make_struct_mask_rows(Shape shape, std::size_t row_count,
                           bool include_diagonal);

/// Exactly floor(fraction * n * m) coordinates drawn without replacement.
Mask make_random_mask(Shape shape, MaskBudget budget, Rng& rng);

/// Top-k entries by |w|.
Mask make_wm_mask(const DenseMatrix& weight, MaskBudget budget);

/// Sum over calibration batches of |dL/dW| (magnitudes are summed, not the
/// signed gradients), one matrix per layer.
std::vector<DenseMatrix> accumulate_grad_magnitudes(
    const Mlp& model, std::span<const Batch> calib, LossKind kind);

/// `layers` empty means every layer.
ModelMask make_grad_mask(const Mlp& model, std::span<const Batch> calib,
                         MaskBudget budget, LossKind kind,
                         std::span<const std::size_t> layers = {});
ModelMask make_snip_mask(const Mlp& model, std::span<const Batch> calib,
                         MaskBudget budget, LossKind kind,
                         std::span<const std::size_t> layers = {});

/// Resolves an inclusion list; empty selects every layer.
std::vector<std::size_t> resolve_layers(const Mlp& model,
                                        std::span<const std::size_t> layers);

}  // namespace shira

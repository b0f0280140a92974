// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "shira/error.hpp"

namespace shira {

void validate_coords(std::span<const Coord> coords, Shape shape) {
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Coord c = coords[i];
    if (c.row >= shape.rows || c.col >= shape.cols) {
      throw ShapeError("coord (" + std::to_string(c.row) + "," +
                       std::to_string(c.col) + ") outside " +
                       to_string(shape));
    }
    if (i > 0 && !(coords[i - 1] < c)) {
      throw IntegrityError("coords not strictly increasing at index " +
                           std::to_string(i));
    }
  }
}

Mask::Mask(std::size_t rows, std::size_t cols, std::vector<Coord> coords)
    : rows_(rows), cols_(cols), coords_(std::move(coords)) {
  if (rows == 0 || cols == 0) throw ShapeError("Mask: empty shape");
  validate_coords(coords_, shape());
}

Mask Mask::full(std::size_t rows, std::size_t cols) {
  std::vector<Coord> coords;
  coords.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      coords.push_back({static_cast<std::uint32_t>(r),
                        static_cast<std::uint32_t>(c)});
  return Mask(rows, cols, std::move(coords));
}

double Mask::density() const noexcept {
  return rows_ * cols_ == 0 ? 0.0
                            : static_cast<double>(coords_.size()) /
                                  static_cast<double>(rows_ * cols_);
}

bool Mask::contains(Coord c) const noexcept {
  return std::binary_search(coords_.begin(), coords_.end(), c);
}

MaskBudget::MaskBudget(double fraction) : fraction_(fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw InvalidArgument("MaskBudget: fraction must be in (0, 1), got " +
                          std::to_string(fraction));
  }
}

std::size_t MaskBudget::count(Shape shape) const noexcept {
  return static_cast<std::size_t>(
      std::floor(fraction_ * static_cast<double>(shape.size())));
}

std::size_t ModelMask::total_size() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, m] : layers) n += m.size();
  return n;
}

void ModelMask::validate_against(const Mlp& model) const {
  for (const auto& [idx, m] : layers) {
    if (idx >= model.layer_count()) {
      throw ShapeError("mask targets layer " + std::to_string(idx) +
                       " but model has " +
                       std::to_string(model.layer_count()));
    }
    if (m.shape() != model.weight(idx).shape()) {
      throw ShapeError("mask for layer " + std::to_string(idx) + " is " +
                       to_string(m.shape()) + ", weight is " +
                       to_string(model.weight(idx).shape()));
    }
  }
}

std::string_view to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::structured: return "struct";
    case MaskStrategy::random: return "rand";
    case MaskStrategy::weight_magnitude: return "wm";
    case MaskStrategy::gradient: return "grad";
    case MaskStrategy::snip: return "snip";
    case MaskStrategy::fused: return "fused";
    case MaskStrategy::custom: return "custom";
  }
  return "unknown";
}

MaskStrategy parse_mask_strategy(std::string_view name) {
  for (auto s : {MaskStrategy::structured, MaskStrategy::random,
                 MaskStrategy::weight_magnitude, MaskStrategy::gradient,
                 MaskStrategy::snip, MaskStrategy::fused,
                 MaskStrategy::custom}) {
    if (to_string(s) == name) return s;
  }
  throw InvalidArgument("unknown mask strategy '" + std::string(name) + "'");
}

bool is_known_strategy(std::uint8_t value) noexcept {
  return value <= 5 || value == 255;
}

Mask top_k_mask(const DenseMatrix& scores, std::size_t k) {
  const std::size_t n = scores.size();
  if (k > n) throw InvalidArgument("top_k_mask: k exceeds entry count");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto data = scores.data();
  auto better = [data](std::size_t a, std::size_t b) {
    if (data[a] != data[b]) return data[a] > data[b];
    return a < b;
  };
  if (k < n) {
    std::nth_element(order.begin(), order.begin() + static_cast<long>(k),
                     order.end(), better);
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  std::vector<Coord> coords;
  coords.reserve(k);
  for (std::size_t idx : order) {
    coords.push_back({static_cast<std::uint32_t>(idx / scores.cols()),
                      static_cast<std::uint32_t>(idx % scores.cols())});
  }
  return Mask(scores.rows(), scores.cols(), std::move(coords));
}

Mask make_struct_mask_rows(Shape shape, std::size_t row_count,
                           bool include_diagonal) {
  if (shape.size() == 0) throw ShapeError("make_struct_mask: empty shape");
  if (row_count > shape.rows) {
    throw InvalidArgument("make_struct_mask: " + std::to_string(row_count) +
                          " rows requested from " +
                          std::to_string(shape.rows));
  }
  std::vector<bool> chosen(shape.rows, false);
  if (row_count > 0) {
    const std::size_t stride = shape.rows / row_count;
    for (std::size_t i = 0; i < row_count; ++i) chosen[i * stride] = true;
  }
  std::vector<Coord> coords;
  for (std::size_t r = 0; r < shape.rows; ++r) {
    const auto r32 = static_cast<std::uint32_t>(r);
    if (chosen[r]) {
      for (std::size_t c = 0; c < shape.cols; ++c)
        coords.push_back({r32, static_cast<std::uint32_t>(c)});
    } else if (include_diagonal && r < shape.cols) {
      coords.push_back({r32, r32});
    }
  }
  return Mask(shape.rows, shape.cols, std::move(coords));
}

Mask make_struct_mask(Shape shape, MaskBudget budget, bool include_diagonal) {
  const double allowed = budget.fraction() * static_cast<double>(shape.size());
  const double diag =
      include_diagonal ? static_cast<double>(std::min(shape.rows, shape.cols))
                       : 0.0;
  if (allowed < diag) {
    throw InvalidArgument(
        "make_struct_mask: budget of " + std::to_string(allowed) +
        " entries cannot hold the diagonal (" + std::to_string(diag) +
        "); raise the fraction or pass include_diagonal=false");
  }
  const double spare = std::floor((allowed - diag) /
                                  static_cast<double>(shape.cols));
  const std::size_t rows =
      std::min(shape.rows, std::max<std::size_t>(1, static_cast<std::size_t>(spare)));
  return make_struct_mask_rows(shape, rows, include_diagonal);
}

Mask make_random_mask(Shape shape, MaskBudget budget, Rng& rng) {
  const std::size_t k = budget.count(shape);
  if (k == 0) {
    throw InvalidArgument("make_random_mask: budget selects no entries for " +
                          to_string(shape));
  }
  // Floyd's sampling: k distinct values from [0, n).
  const std::uint64_t n = shape.size();
  std::unordered_set<std::uint64_t> picked;
  picked.reserve(k * 2);
  std::vector<std::uint64_t> linear;
  linear.reserve(k);
  for (std::uint64_t j = n - k; j < n; ++j) {
    const std::uint64_t t = rng.below(j + 1);
    const std::uint64_t v = picked.insert(t).second ? t : j;
    if (v == j) picked.insert(j);
    linear.push_back(v);
  }
  std::sort(linear.begin(), linear.end());
  std::vector<Coord> coords;
  coords.reserve(k);
  for (std::uint64_t idx : linear) {
    coords.push_back({static_cast<std::uint32_t>(idx / shape.cols),
                      static_cast<std::uint32_t>(idx % shape.cols)});
  }
  return Mask(shape.rows, shape.cols, std::move(coords));
}

Mask make_wm_mask(const DenseMatrix& weight, MaskBudget budget) {
  if (!weight.all_finite()) {
    throw InvalidArgument("make_wm_mask: weight has non-finite entries");
  }
  DenseMatrix scores = weight;
  for (double& v : scores.data()) v = std::abs(v);
  return top_k_mask(scores, budget.count(weight.shape()));
}

std::vector<std::size_t> resolve_layers(const Mlp& model,
                                        std::span<const std::size_t> layers) {
  std::vector<std::size_t> out(layers.begin(), layers.end());
  if (out.empty()) {
    out.resize(model.layer_count());
    std::iota(out.begin(), out.end(), std::size_t{0});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  for (std::size_t idx : out) {
    if (idx >= model.layer_count()) {
      throw InvalidArgument("layer " + std::to_string(idx) +
                            " does not exist (model has " +
                            std::to_string(model.layer_count()) + ")");
    }
  }
  return out;
}

std::vector<DenseMatrix> accumulate_grad_magnitudes(
    const Mlp& model, std::span<const Batch> calib, LossKind kind) {
  if (calib.empty()) {
    throw InvalidArgument("gradient saliency needs at least one calibration "
                          "batch");
  }
  std::vector<DenseMatrix> acc;
  for (const auto& l : model.layers())
    acc.emplace_back(l.weight.rows(), l.weight.cols());
  for (std::size_t b = 0; b < calib.size(); ++b) {
    const Batch& batch = calib[b];
    batch.validate();
    if (batch.inputs.cols() != model.input_dim()) {
      throw ShapeError("calibration batch " + std::to_string(b) +
                       " has width " + std::to_string(batch.inputs.cols()) +
                       ", model expects " + std::to_string(model.input_dim()));
    }
    if (b > 0 && batch.targets.index() != calib[0].targets.index()) {
      throw ShapeError("calibration batch " + std::to_string(b) +
                       " changes target kind");
    }
    auto pass = forward(model, batch.inputs);
    GradientSet g = backward(model, pass.cache, batch.targets, kind);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      auto dst = acc[i].data();
      auto src = g.weight[i].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += std::abs(src[j]);
    }
  }
  return acc;
}

namespace {

ModelMask saliency_mask(const Mlp& model, std::span<const Batch> calib,
                        MaskBudget budget, LossKind kind,
                        std::span<const std::size_t> layers, bool times_weight) {
  auto selected = resolve_layers(model, layers);
  auto acc = accumulate_grad_magnitudes(model, calib, kind);
  ModelMask out;
  for (std::size_t idx : selected) {
    DenseMatrix& scores = acc[idx];
    if (times_weight) {
      auto w = model.weight(idx).data();
      auto s = scores.data();
      for (std::size_t j = 0; j < s.size(); ++j) s[j] *= std::abs(w[j]);
    }
    out.layers.emplace(idx, top_k_mask(scores, budget.count(scores.shape())));
  }
  return out;
}

}  // namespace

ModelMask make_grad_mask(const Mlp& model, std::span<const Batch> calib,
                         MaskBudget budget, LossKind kind,
                         std::span<const std::size_t> layers) {
  return saliency_mask(model, calib, budget, kind, layers, false);
}

ModelMask make_snip_mask(const Mlp& model, std::span<const Batch> calib,
                         MaskBudget budget, LossKind kind,
                         std::span<const std::size_t> layers) {
  return saliency_mask(model, calib, budget, kind, layers, true);
}

}  // namespace shira

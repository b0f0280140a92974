// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/adapter.hpp"

#include <algorithm>
#include <string>

#include "shira/error.hpp"

namespace shira {

double SparseAdapter::density() const noexcept {
  const double total = static_cast<double>(rows) * static_cast<double>(cols);
  return total == 0.0 ? 0.0 : static_cast<double>(coords.size()) / total;
}

void SparseAdapter::validate() const {
  if (rows == 0 || cols == 0) throw ShapeError("SparseAdapter: empty shape");
  if (values.size() != coords.size()) {
    throw IntegrityError("SparseAdapter: " + std::to_string(values.size()) +
                         " values for " + std::to_string(coords.size()) +
                         " coords");
  }
  validate_coords(coords, shape());
}

void LoraAdapter::validate() const {
  if (a.cols() != b.rows()) {
    throw ShapeError("LoraAdapter: a is " + to_string(a.shape()) +
                     " but b is " + to_string(b.shape()));
  }
  if (rank() == 0 || rank() > std::min(a.rows(), b.cols())) {
    throw InvalidArgument("LoraAdapter: rank " + std::to_string(rank()) +
                          " invalid for " + to_string(shape()));
  }
}

std::size_t SparseModelAdapter::total_nnz() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, a] : layers) n += a.nnz();
  return n;
}

namespace {

const DenseMatrix& target_weight(const Mlp& model, std::uint32_t layer,
                                 Shape expected) {
  if (layer >= model.layer_count()) {
    throw ShapeError("adapter targets layer " + std::to_string(layer) +
                     " but model has " + std::to_string(model.layer_count()));
  }
  const DenseMatrix& w = model.weight(layer);
  if (w.shape() != expected) {
    throw ShapeError("adapter layer " + std::to_string(layer) + " is " +
                     to_string(expected) + ", model weight is " +
                     to_string(w.shape()));
  }
  return w;
}

}  // namespace

void validate_against(const SparseModelAdapter& adapter, const Mlp& model) {
  for (const auto& [idx, a] : adapter.layers) {
    a.validate();
    target_weight(model, idx, a.shape());
  }
}

void validate_against(const LoraModelAdapter& adapter, const Mlp& model) {
  for (const auto& [idx, a] : adapter.layers) {
    a.validate();
    target_weight(model, idx, a.shape());
  }
}

void validate_against(const ModelAdapter& adapter, const Mlp& model) {
  std::visit([&](const auto& a) { validate_against(a, model); }, adapter);
}

SparseAdapter extract_sparse(const DenseMatrix& w_base,
                             const DenseMatrix& w_new, const Mask& mask) {
  if (w_base.shape() != w_new.shape() || mask.shape() != w_base.shape()) {
    throw ShapeError("extract_sparse: base " + to_string(w_base.shape()) +
                     ", new " + to_string(w_new.shape()) + ", mask " +
                     to_string(mask.shape()));
  }
  SparseAdapter out;
  out.rows = static_cast<std::uint32_t>(w_base.rows());
  out.cols = static_cast<std::uint32_t>(w_base.cols());
  out.coords.assign(mask.coords().begin(), mask.coords().end());
  out.values.reserve(out.coords.size());

  // Walk the dense tensors once, consuming mask coords in order.
  const auto base = w_base.data();
  const auto next = w_new.data();
  const auto coords = mask.coords();
  std::size_t ci = 0;
  for (std::size_t idx = 0; idx < base.size(); ++idx) {
    const bool on_mask =
        ci < coords.size() &&
        static_cast<std::size_t>(coords[ci].row) * w_base.cols() +
                coords[ci].col ==
            idx;
    if (on_mask) {
      out.values.push_back(next[idx] - base[idx]);
      ++ci;
    } else if (next[idx] != base[idx]) {
      throw IntegrityError(
          "extract_sparse: off-mask weight changed at (" +
          std::to_string(idx / w_base.cols()) + "," +
          std::to_string(idx % w_base.cols()) +
          "); gradient masking is broken");
    }
  }
  return out;
}

DenseMatrix apply_sparse(const DenseMatrix& w, const SparseAdapter& adapter,
                         double alpha) {
  if (w.shape() != adapter.shape()) {
    throw ShapeError("apply_sparse: weight " + to_string(w.shape()) +
                     " vs adapter " + to_string(adapter.shape()));
  }
  DenseMatrix out = w;
  if (alpha == 0.0) return out;
  for (std::size_t i = 0; i < adapter.coords.size(); ++i) {
    const Coord c = adapter.coords[i];
    double& v = out(c.row, c.col);
    v = v + alpha * adapter.values[i];
  }
  return out;
}

DenseMatrix fuse_lora(const DenseMatrix& w, const LoraAdapter& adapter,
                      double alpha) {
  adapter.validate();
  if (w.shape() != adapter.shape()) {
    throw ShapeError("fuse_lora: weight " + to_string(w.shape()) +
                     " vs adapter " + to_string(adapter.shape()));
  }
  return add_scaled(w, matmul(adapter.a, adapter.b),
                    alpha * adapter.alpha_lora);
}

DenseMatrix delta_dense(const SparseAdapter& adapter) {
  DenseMatrix out(adapter.rows, adapter.cols);
  for (std::size_t i = 0; i < adapter.coords.size(); ++i)
    out(adapter.coords[i].row, adapter.coords[i].col) = adapter.values[i];
  return out;
}

DenseMatrix delta_dense(const LoraAdapter& adapter) {
  adapter.validate();
  DenseMatrix d = matmul(adapter.a, adapter.b);
  for (double& v : d.data()) v *= adapter.alpha_lora;
  return d;
}

Mlp apply_to_model(const Mlp& model, const ModelAdapter& adapter,
                   double alpha) {
  validate_against(adapter, model);
  Mlp out = model;
  std::visit(
      [&](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        for (const auto& [idx, layer] : a.layers) {
          if constexpr (std::is_same_v<T, SparseModelAdapter>)
            out.weight(idx) = apply_sparse(model.weight(idx), layer, alpha);
          else
            out.weight(idx) = fuse_lora(model.weight(idx), layer, alpha);
        }
      },
      adapter);
  return out;
}

StorageCount storage_count(const SparseModelAdapter& adapter) {
  StorageCount s;
  for (const auto& [_, a] : adapter.layers) {
    s.values += a.nnz();
    s.index_words += 2 * a.nnz();
  }
  return s;
}

StorageCount storage_count(const LoraModelAdapter& adapter) {
  StorageCount s;
  for (const auto& [_, a] : adapter.layers)
    s.values += a.a.size() + a.b.size();
  return s;
}

}  // namespace shira

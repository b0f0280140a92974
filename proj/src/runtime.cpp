// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/runtime.hpp"

#include <utility>

#include "shira/error.hpp"

namespace shira {

std::size_t scatter_apply(DenseMatrix& w, std::span<const Coord> coords,
                          std::span<const double> values, double alpha,
                          std::span<double> saved) {
  if (values.size() != coords.size() || saved.size() != coords.size()) {
    throw ShapeError("scatter_apply: coords/values/saved lengths disagree");
  }
  double* data = w.data().data();
  const std::size_t cols = w.cols();
  const std::size_t n = coords.size();
  if (alpha == 0.0) {
    for (std::size_t i = 0; i < n; ++i)
      saved[i] = data[coords[i].row * cols + coords[i].col];
    return 0;
  }
  constexpr std::size_t kAhead = 16;
  for (std::size_t i = 0; i < n; ++i) {
    if (i + kAhead < n) {
      __builtin_prefetch(&data[coords[i + kAhead].row * cols + coords[i + kAhead].col], 1);
    }
    double& slot = data[coords[i].row * cols + coords[i].col];
    saved[i] = slot;
    slot = slot + alpha * values[i];
  }
  return n;
}

std::size_t scatter_restore(DenseMatrix& w, std::span<const Coord> coords,
                            std::span<const double> saved) {
  if (saved.size() != coords.size()) {
    throw ShapeError("scatter_restore: coords/saved lengths disagree");
  }
  double* data = w.data().data();
  const std::size_t cols = w.cols();
  for (std::size_t i = 0; i < coords.size(); ++i)
    data[coords[i].row * cols + coords[i].col] = saved[i];
  return coords.size();
}

std::size_t lora_fuse_inplace(DenseMatrix& w, const DenseMatrix& a,
                              const DenseMatrix& b, double scale) {
  if (a.cols() != b.rows() || w.rows() != a.rows() || w.cols() != b.cols()) {
    throw ShapeError("lora_fuse_inplace: w " + to_string(w.shape()) + ", a " +
                     to_string(a.shape()) + ", b " + to_string(b.shape()));
  }
  if (scale == 0.0) return 0;
  std::vector<double> product(w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    std::fill(product.begin(), product.end(), 0.0);
    // Same accumulation order as matmul so the result matches fuse_lora.
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < product.size(); ++j)
        product[j] += aik * b_row[j];
    }
    auto w_row = w.row(i);
    for (std::size_t j = 0; j < product.size(); ++j)
      w_row[j] = w_row[j] + scale * product[j];
  }
  return w.size();
}

AdapterRuntime::AdapterRuntime(Mlp model) : model_(std::move(model)) {
  model_.validate();
}

void AdapterRuntime::require_idle(const char* op) const {
  if (active_) {
    throw StateError(std::string(op) + ": adapter '" + active_->id +
                     "' is already active; unload it first");
  }
}

void AdapterRuntime::load(const ModelAdapter& adapter, double alpha,
                          std::string id) {
  if (const auto* s = std::get_if<SparseModelAdapter>(&adapter))
    load_sparse(*s, alpha, std::move(id));
  else
    load_lora(std::get<LoraModelAdapter>(adapter), alpha, std::move(id));
}

void AdapterRuntime::load_sparse(const SparseModelAdapter& adapter,
                                 double alpha, std::string id) {
  require_idle("load_sparse");
  validate_against(adapter, model_);
  std::map<std::uint32_t, RestoreLayer> restore;
  for (const auto& [idx, layer] : adapter.layers) {
    RestoreLayer& slot = restore[idx];
    slot.coords = layer.coords;
    slot.saved.resize(layer.coords.size());
    writes_ += scatter_apply(model_.weight(idx), layer.coords, layer.values,
                             alpha, slot.saved);
  }
  restore_ = std::move(restore);
  active_ = Active{std::move(id), alpha, true};
}

void AdapterRuntime::load_lora(const LoraModelAdapter& adapter, double alpha,
                               std::string id) {
  require_idle("load_lora");
  validate_against(adapter, model_);
  for (const auto& [idx, layer] : adapter.layers) {
    writes_ += lora_fuse_inplace(model_.weight(idx), layer.a, layer.b,
                                 alpha * layer.alpha_lora);
  }
  fused_lora_ = adapter;
  active_ = Active{std::move(id), alpha, false};
}

void AdapterRuntime::unload() {
  if (!active_) throw StateError("unload: no adapter is active");
  if (active_->sparse) {
    for (const auto& [idx, slot] : restore_)
      writes_ += scatter_restore(model_.weight(idx), slot.coords, slot.saved);
    restore_.clear();
  } else {
    for (const auto& [idx, layer] : fused_lora_->layers) {
      writes_ += lora_fuse_inplace(model_.weight(idx), layer.a, layer.b,
                                   -(active_->alpha * layer.alpha_lora));
    }
    fused_lora_.reset();
  }
  active_.reset();
}

std::chrono::nanoseconds AdapterRuntime::switch_to(const ModelAdapter& next,
                                                   double alpha,
                                                   std::string id) {
  const auto start = std::chrono::steady_clock::now();
  if (active_) unload();
  load(next, alpha, std::move(id));
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
      std::chrono::steady_clock::now() - start);
}

}  // namespace shira

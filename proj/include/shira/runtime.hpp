// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shira/adapter.hpp"
#include "shira/nn.hpp"

namespace shira {

// Kernels shared by the runtime and the benchmarks. Each returns the number
// of weight entries it wrote.

/// saved[i] = w[offset_i]; w[offset_i] += alpha * values[i]. alpha == 0
/// saves but writes nothing.
std::size_t scatter_apply(DenseMatrix& w, std::span<const Coord> coords,
                          std::span<const double> values, double alpha,
                          std::span<double> saved);
/// w[offset_i] = saved[i].
std::size_t scatter_restore(DenseMatrix& w, std::span<const Coord> coords,
                            std::span<const double> saved);
/// w += scale * (a * b), one output row at a time; `scale` already folds in
/// alpha_lora. Bit-identical to fuse_lora for the same scale.
std::size_t lora_fuse_inplace(DenseMatrix& w, const DenseMatrix& a,
                              const DenseMatrix& b, double scale);

/// Resident model with at most one active adapter. SHiRA adapters are
/// loaded by indexed overwrite and unloaded from a buffer of the original
/// values, so unload is bit-exact. LoRA adapters are fused densely and
/// unfused by subtraction. Not thread-safe.
class AdapterRuntime {
 public:
  struct Active {
    std::string id;
    double alpha = 0.0;
    bool sparse = true;
  };

  explicit AdapterRuntime(Mlp model);

  const Mlp& model() const noexcept { return model_; }
  const std::optional<Active>& active() const noexcept { return active_; }
  bool has_restore_buffer() const noexcept { return !restore_.empty(); }

  void load(const ModelAdapter& adapter, double alpha, std::string id = {});
  void load_sparse(const SparseModelAdapter& adapter, double alpha,
                   std::string id = {});
  void load_lora(const LoraModelAdapter& adapter, double alpha,
                 std::string id = {});
  void unload();
  /// Unload whatever is active, then load `next`. Returns elapsed time.
  std::chrono::nanoseconds switch_to(const ModelAdapter& next, double alpha,
                                     std::string id = {});

  /// Weight entries written by load/unload since construction or reset.
  std::uint64_t write_count() const noexcept { return writes_; }
  void reset_write_count() noexcept { writes_ = 0; }

 private:
  struct RestoreLayer {
    std::vector<Coord> coords;
    std::vector<double> saved;
  };

  void require_idle(const char* op) const;

  Mlp model_;
  std::optional<Active> active_;
  std::map<std::uint32_t, RestoreLayer> restore_;
  std::optional<LoraModelAdapter> fused_lora_;
  std::uint64_t writes_ = 0;
};

}  // namespace shira

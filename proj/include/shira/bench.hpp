// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "shira/adapter.hpp"
#include "shira/nn.hpp"

namespace shira {

inline constexpr std::size_t kMinTrials = 10;

struct BenchConfig {
  std::vector<std::size_t> dims{512, 1024, 2048, 4096};
  std::vector<double> densities{0.01, 0.02};
  std::size_t lora_rank = 64;
  std::size_t trials = 10;
  std::size_t warmup = 2;
  std::uint64_t seed = 2024;

  /// ConfigError on trials below kMinTrials or empty/invalid axes.
  void validate() const;
  nlohmann::json to_json() const;
};

/// One CSV row. For scatter rows `density_or_rank` is the density and
/// `speedup` is lora_mean / scatter_mean at the same dim; for fuse rows it
/// is the rank and speedup is 1.
struct BenchRow {
  std::size_t dim = 0;
  double density_or_rank = 0.0;
  std::string method;
  double mean_ns = 0.0;
  double std_ns = 0.0;
  double median_ns = 0.0;
  std::size_t trials = 0;
  double speedup = 1.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;

  /// Speedup of the scatter row at (dim, density); InvalidArgument if absent.
  double speedup(std::size_t dim, double density) const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Times LoRA fuse (including the rank-r product) against SHiRA indexed
/// overwrite on a fresh dim x dim base per dim. Trials are interleaved
/// fuse, scatter(d0), scatter(d1), ... and warm-up rounds are discarded.
BenchResult bench_switch(const BenchConfig& config);

struct StageTiming {
  std::string adapter;
  std::string method;  // "shira" or "lora"
  double load_ns = 0.0;    // decode from bytes
  double fuse_ns = 0.0;    // overwrite or fuse into the resident model
  double unfuse_ns = 0.0;  // restore or unfuse
  double unload_ns = 0.0;  // release decoded adapter
  std::size_t trials = 0;
};

/// Mean per-stage timings over `trials` cycles per adapter. Adapters are
/// serialized once up front so that load includes deserialization.
std::vector<StageTiming> bench_stages(const Mlp& model,
                                      const std::vector<ModelAdapter>& adapters,
                                      std::size_t trials = kMinTrials);
nlohmann::json stages_to_json(const std::vector<StageTiming>& stages);

}  // namespace shira

// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>

#include "shira/error.hpp"
#include "shira/mask.hpp"
#include "shira/persist.hpp"
#include "shira/runtime.hpp"

namespace shira {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ns(Clock::time_point start, Clock::time_point stop) {
  return static_cast<double>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start)
          .count());
}

struct Stats {
  double mean = 0.0;
  double stddev = 0.0;
  double median = 0.0;
};

Stats summarize(std::vector<double> samples) {
  Stats s;
  const double n = static_cast<double>(samples.size());
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : samples) ss += (v - s.mean) * (v - s.mean);
  s.stddev = samples.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::sort(samples.begin(), samples.end());
  const std::size_t mid = samples.size() / 2;
  s.median = samples.size() % 2 == 1
                 ? samples[mid]
                 : 0.5 * (samples[mid - 1] + samples[mid]);
  return s;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Mask bench_mask(std::size_t dim, double density, Rng& rng) {
  if (density >= 1.0) return Mask::full(dim, dim);
  return make_random_mask({dim, dim}, MaskBudget(density), rng);
}

// Keeps timed results observable so the kernels cannot be elided.
volatile double g_sink = 0.0;

}  // namespace

void BenchConfig::validate() const {
  if (trials < kMinTrials) {
    throw ConfigError("bench trials must be at least " +
                      std::to_string(kMinTrials) + ", got " +
                      std::to_string(trials));
  }
  if (dims.empty() || densities.empty()) {
    throw ConfigError("bench needs at least one dim and one density");
  }
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("bench dim must be positive");
  }
  for (double d : densities) {
    if (!(d > 0.0 && d <= 1.0)) {
      throw ConfigError("bench density must be in (0, 1], got " +
                        format_number(d));
    }
  }
  if (lora_rank == 0) throw ConfigError("bench lora_rank must be positive");
}

nlohmann::json BenchConfig::to_json() const {
  return {{"dims", dims},         {"densities", densities},
          {"lora_rank", lora_rank}, {"trials", trials},
          {"warmup", warmup},     {"seed", seed}};
}

double BenchResult::speedup(std::size_t dim, double density) const {
  for (const BenchRow& r : rows) {
    if (r.dim == dim && r.method == "shira_scatter" &&
        r.density_or_rank == density) {
      return r.speedup;
    }
  }
  throw InvalidArgument("no scatter row for dim " + std::to_string(dim) +
                        " density " + format_number(density));
}

std::string BenchResult::to_csv() const {
  std::ostringstream out;
  out << "dim,density_or_rank,method,mean_ns,std_ns,trials,speedup\n";
  for (const BenchRow& r : rows) {
    out << r.dim << ',' << format_number(r.density_or_rank) << ',' << r.method
        << ',' << format_number(r.mean_ns) << ',' << format_number(r.std_ns)
        << ',' << r.trials << ',' << format_number(r.speedup) << '\n';
  }
  return out.str();
}

nlohmann::json BenchResult::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const BenchRow& r : rows) {
    out.push_back({{"dim", r.dim},
                   {"density_or_rank", r.density_or_rank},
                   {"method", r.method},
                   {"mean_ns", r.mean_ns},
                   {"std_ns", r.std_ns},
                   {"median_ns", r.median_ns},
                   {"trials", r.trials},
                   {"speedup", r.speedup}});
  }
  return out;
}

BenchResult bench_switch(const BenchConfig& config) {
  config.validate();
  BenchResult result;
  for (std::size_t dim : config.dims) {
    Rng rng(config.seed ^ (0x9e3779b97f4a7c15ull * dim));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    DenseMatrix w = rand_matrix(rng, dim, dim, Distribution::gaussian(scale));
    const DenseMatrix a = rand_matrix(rng, dim, config.lora_rank,
                                      Distribution::gaussian(scale));
    const DenseMatrix b = rand_matrix(rng, config.lora_rank, dim,
                                      Distribution::gaussian(scale));

    struct Sparse {
      double density;
      Mask mask;
      std::vector<double> values;
      std::vector<double> saved;
      std::vector<double> samples;
    };
    std::vector<Sparse> sparse;
    for (double d : config.densities) {
      Sparse s{d, bench_mask(dim, d, rng), {}, {}, {}};
      s.values.resize(s.mask.size());
      for (double& v : s.values) v = scale * rng.gaussian();
      s.saved.resize(s.mask.size());
      sparse.push_back(std::move(s));
    }

    std::vector<double> fuse_samples;
    const std::size_t rounds = config.warmup + config.trials;
    for (std::size_t t = 0; t < rounds; ++t) {
      // Alternating sign keeps w bounded across rounds.
      const double sign = (t % 2 == 0) ? 1.0 : -1.0;
      auto start = Clock::now();
      lora_fuse_inplace(w, a, b, sign);
      auto stop = Clock::now();
      if (t >= config.warmup) fuse_samples.push_back(elapsed_ns(start, stop));
      for (Sparse& s : sparse) {
          start = Clock::now();
        scatter_apply(w, s.mask.coords(), s.values, sign, s.saved);
        stop = Clock::now();
        if (t >= config.warmup) s.samples.push_back(elapsed_ns(start, stop));
      }
    }
    g_sink = g_sink + w(dim / 2, dim / 3);

    const Stats fuse = summarize(fuse_samples);
    result.rows.push_back({dim, static_cast<double>(config.lora_rank),
                           "lora_fuse", fuse.mean, fuse.stddev, fuse.median,
                           config.trials, 1.0});
    for (const Sparse& s : sparse) {
      const Stats st = summarize(s.samples);
      result.rows.push_back({dim, s.density, "shira_scatter", st.mean,
                             st.stddev, st.median, config.trials,
                             fuse.mean / st.mean});
    }
  }
  return result;
}

std::vector<StageTiming> bench_stages(const Mlp& model,
                                      const std::vector<ModelAdapter>& adapters,
                                      std::size_t trials) {
  if (adapters.empty()) {
    throw InvalidArgument("bench_stages needs at least one adapter");
  }
  if (trials < kMinTrials) {
    throw ConfigError("bench trials must be at least " +
                      std::to_string(kMinTrials));
  }
  std::vector<StageTiming> out;
  AdapterRuntime rt(model);
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    const Bytes bytes = encode_adapter(adapters[i]);
    StageTiming timing;
    timing.adapter = "adapter" + std::to_string(i);
    timing.method =
        std::holds_alternative<SparseModelAdapter>(adapters[i]) ? "shira"
                                                                : "lora";
    timing.trials = trials;
    for (std::size_t t = 0; t <= trials; ++t) {
      const auto t0 = Clock::now();
      std::optional<ModelAdapter> decoded(decode_adapter(bytes));
      const auto t1 = Clock::now();
      rt.load(*decoded, 1.0, timing.adapter);
      const auto t2 = Clock::now();
      rt.unload();
      const auto t3 = Clock::now();
      decoded.reset();
      const auto t4 = Clock::now();
      if (t == 0) continue;  // warm-up
      timing.load_ns += elapsed_ns(t0, t1);
      timing.fuse_ns += elapsed_ns(t1, t2);
      timing.unfuse_ns += elapsed_ns(t2, t3);
      timing.unload_ns += elapsed_ns(t3, t4);
    }
    const double n = static_cast<double>(trials);
    timing.load_ns /= n;
    timing.fuse_ns /= n;
    timing.unfuse_ns /= n;
    timing.unload_ns /= n;
    out.push_back(timing);
  }
  return out;
}

nlohmann::json stages_to_json(const std::vector<StageTiming>& stages) {
  nlohmann::json out = nlohmann::json::array();
  for (const StageTiming& s : stages) {
    out.push_back({{"adapter", s.adapter},
                   {"method", s.method},
                   {"load_ns", s.load_ns},
                   {"fuse_ns", s.fuse_ns},
                   {"unfuse_ns", s.unfuse_ns},
                   {"unload_ns", s.unload_ns},
                   {"trials", s.trials}});
  }
  return out;
}

}  // namespace shira

// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <utility>

#include "shira/error.hpp"
#include "shira/runtime.hpp"

namespace shira {
namespace {

std::vector<double> resolve_weights(std::size_t count,
                                    std::span<const double> weights) {
  if (weights.empty()) return std::vector<double>(count, 1.0);
  if (weights.size() != count) {
    throw InvalidArgument("fusion weights: " + std::to_string(weights.size()) +
                          " weights for " + std::to_string(count) +
                          " adapters");
  }
  for (double w : weights) {
    if (!std::isfinite(w)) throw InvalidArgument("fusion weight not finite");
  }
  return {weights.begin(), weights.end()};
}

std::string source_name(const nlohmann::json& meta, std::size_t i) {
  if (meta.contains("name") && meta["name"].is_string())
    return meta["name"].get<std::string>();
  return "adapter" + std::to_string(i);
}

struct Entry {
  Coord coord;
  std::size_t source;
  double value;
};

}  // namespace

SparseModelAdapter fuse_multi(std::span<const SparseModelAdapter> adapters,
                              std::span<const double> weights, bool strict) {
  if (adapters.size() < 2) {
    throw InvalidArgument("fuse_multi needs at least two adapters");
  }
  const std::vector<double> w = resolve_weights(adapters.size(), weights);

  std::map<std::uint32_t, std::vector<std::size_t>> by_layer;
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    for (const auto& [id, layer] : adapters[i].layers) {
      layer.validate();
      by_layer[id].push_back(i);
    }
  }

  SparseModelAdapter out;
  for (const auto& [id, sources] : by_layer) {
    const SparseAdapter& first = adapters[sources.front()].layers.at(id);
    std::vector<Entry> entries;
    bool same_strategy = true;
    for (std::size_t i : sources) {
      const SparseAdapter& layer = adapters[i].layers.at(id);
      if (layer.shape() != first.shape()) {
        throw ShapeError("fuse_multi: layer " + std::to_string(id) + " is " +
                         to_string(first.shape()) + " in adapter " +
                         std::to_string(sources.front()) + " but " +
                         to_string(layer.shape()) + " in adapter " +
                         std::to_string(i));
      }
      same_strategy = same_strategy && layer.strategy == first.strategy;
      const double scale = w[i] * layer.alpha_default;
      for (std::size_t k = 0; k < layer.nnz(); ++k)
        entries.push_back({layer.coords[k], i, scale * layer.values[k]});
    }
    // Canonical order: coord, then list position.
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) {
                return a.coord != b.coord ? a.coord < b.coord
                                          : a.source < b.source;
              });

    SparseAdapter fused;
    fused.rows = first.rows;
    fused.cols = first.cols;
    fused.source_layer = id;
    fused.strategy = same_strategy ? first.strategy : MaskStrategy::custom;
    for (const Entry& e : entries) {
      if (!fused.coords.empty() && fused.coords.back() == e.coord) {
        if (strict) {
          throw IntegrityError("fuse_multi: coord (" +
                               std::to_string(e.coord.row) + "," +
                               std::to_string(e.coord.col) + ") of layer " +
                               std::to_string(id) +
                               " appears in more than one adapter");
        }
        fused.values.back() += e.value;
      } else {
        fused.coords.push_back(e.coord);
        fused.values.push_back(e.value);
      }
    }
    out.layers.emplace(id, std::move(fused));
  }

  nlohmann::json sources = nlohmann::json::array();
  for (const SparseModelAdapter& a : adapters) sources.push_back(a.meta);
  out.meta = {{"method", "fused"}, {"sources", sources}, {"weights", w}};
  return out;
}

SparseModelAdapter fuse_multi(std::span<const ModelAdapter> adapters,
                              std::span<const double> weights, bool strict) {
  std::vector<SparseModelAdapter> sparse;
  sparse.reserve(adapters.size());
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    const auto* s = std::get_if<SparseModelAdapter>(&adapters[i]);
    if (s == nullptr) {
      throw InvalidArgument("fuse_multi: adapter " + std::to_string(i) +
                            " is LoRA; sparse fusion needs sparse adapters");
    }
    sparse.push_back(*s);
  }
  return fuse_multi(std::span<const SparseModelAdapter>(sparse), weights,
                    strict);
}

LoraModelAdapter fuse_multi_lora(std::span<const LoraModelAdapter> adapters,
                                 std::span<const double> weights) {
  if (adapters.size() < 2) {
    throw InvalidArgument("fuse_multi_lora needs at least two adapters");
  }
  const std::vector<double> w = resolve_weights(adapters.size(), weights);

  std::map<std::uint32_t, std::vector<std::size_t>> by_layer;
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    for (const auto& [id, layer] : adapters[i].layers) {
      layer.validate();
      by_layer[id].push_back(i);
    }
  }

  LoraModelAdapter out;
  for (const auto& [id, sources] : by_layer) {
    const Shape shape = adapters[sources.front()].layers.at(id).shape();
    std::size_t rank = 0;
    for (std::size_t i : sources) {
      const LoraAdapter& layer = adapters[i].layers.at(id);
      if (layer.shape() != shape) {
        throw ShapeError("fuse_multi_lora: layer " + std::to_string(id) +
                         " shapes " + to_string(shape) + " and " +
                         to_string(layer.shape()));
      }
      rank += layer.rank();
    }
    LoraAdapter fused;
    fused.alpha_lora = 1.0;
    fused.a = DenseMatrix(shape.rows, rank);
    fused.b = DenseMatrix(rank, shape.cols);
    std::size_t offset = 0;
    for (std::size_t i : sources) {
      const LoraAdapter& layer = adapters[i].layers.at(id);
      const double scale = w[i] * layer.alpha_lora;
      for (std::size_t r = 0; r < shape.rows; ++r)
        for (std::size_t k = 0; k < layer.rank(); ++k)
          fused.a(r, offset + k) = scale * layer.a(r, k);
      for (std::size_t k = 0; k < layer.rank(); ++k)
        for (std::size_t c = 0; c < shape.cols; ++c)
          fused.b(offset + k, c) = layer.b(k, c);
      offset += layer.rank();
    }
    if (rank > std::min(shape.rows, shape.cols)) {
      // Fold into an identity factor so the rank stays within min(n, m).
      const DenseMatrix delta = matmul(fused.a, fused.b);
      if (shape.rows <= shape.cols) {
        fused.a = DenseMatrix(shape.rows, shape.rows);
        for (std::size_t r = 0; r < shape.rows; ++r) fused.a(r, r) = 1.0;
        fused.b = delta;
      } else {
        fused.a = delta;
        fused.b = DenseMatrix(shape.cols, shape.cols);
        for (std::size_t c = 0; c < shape.cols; ++c) fused.b(c, c) = 1.0;
      }
    }
    out.layers.emplace(id, std::move(fused));
  }
  nlohmann::json sources = nlohmann::json::array();
  for (const LoraModelAdapter& a : adapters) sources.push_back(a.meta);
  out.meta = {{"method", "fused_lora"}, {"sources", sources}, {"weights", w}};
  return out;
}

nlohmann::json Interference::to_json() const {
  return {{"rows", rows},
          {"cols", cols},
          {"support1", support1},
          {"support2", support2},
          {"overlap", overlap},
          {"union", union_size},
          {"overlap_fraction", overlap_fraction},
          {"product_structural_nnz", product_structural_nnz},
          {"product_nnz", product_nnz},
          {"product_density", product_density},
          {"product_frobenius", product_frobenius}};
}

Interference interference(const SparseAdapter& a1, const SparseAdapter& a2) {
  a1.validate();
  a2.validate();
  if (a1.shape() != a2.shape()) {
    throw ShapeError("interference: shapes " + to_string(a1.shape()) +
                     " and " + to_string(a2.shape()));
  }
  Interference out;
  out.rows = a1.rows;
  out.cols = a1.cols;
  out.support1 = a1.nnz();
  out.support2 = a2.nnz();

  // Both coord lists are row-major sorted: walk them row by row.
  std::unordered_map<std::uint64_t, double> product;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a1.nnz() && j < a2.nnz()) {
    const std::uint32_t r1 = a1.coords[i].row;
    const std::uint32_t r2 = a2.coords[j].row;
    if (r1 < r2) {
      while (i < a1.nnz() && a1.coords[i].row == r1) ++i;
      continue;
    }
    if (r2 < r1) {
      while (j < a2.nnz() && a2.coords[j].row == r2) ++j;
      continue;
    }
    std::size_t i_end = i;
    while (i_end < a1.nnz() && a1.coords[i_end].row == r1) ++i_end;
    std::size_t j_end = j;
    while (j_end < a2.nnz() && a2.coords[j_end].row == r1) ++j_end;
    for (std::size_t p = i, q = j; p < i_end && q < j_end;) {
      if (a1.coords[p].col < a2.coords[q].col) {
        ++p;
      } else if (a2.coords[q].col < a1.coords[p].col) {
        ++q;
      } else {
        ++out.overlap;
        ++p;
        ++q;
      }
    }
    for (std::size_t p = i; p < i_end; ++p) {
      for (std::size_t q = j; q < j_end; ++q) {
        const std::uint64_t key =
            std::uint64_t{a1.coords[p].col} * a1.cols + a2.coords[q].col;
        product[key] += a1.values[p] * a2.values[q];
      }
    }
    i = i_end;
    j = j_end;
  }

  out.union_size = out.support1 + out.support2 - out.overlap;
  out.overlap_fraction = static_cast<double>(out.overlap) /
                         (static_cast<double>(out.rows) * out.cols);
  out.product_structural_nnz = product.size();
  double sumsq = 0.0;
  for (const auto& [key, v] : product) {
    if (v != 0.0) ++out.product_nnz;
    sumsq += v * v;
  }
  out.product_frobenius = std::sqrt(sumsq);
  out.product_density = static_cast<double>(out.product_nnz) /
                        (static_cast<double>(out.cols) * out.cols);
  return out;
}

Interference interference(const LoraAdapter& a1, const LoraAdapter& a2) {
  a1.validate();
  a2.validate();
  if (a1.shape() != a2.shape()) {
    throw ShapeError("interference: shapes " + to_string(a1.shape()) +
                     " and " + to_string(a2.shape()));
  }
  const DenseMatrix d1 = delta_dense(a1);
  const DenseMatrix d2 = delta_dense(a2);
  Interference out;
  out.rows = d1.rows();
  out.cols = d1.cols();
  for (std::size_t k = 0; k < d1.size(); ++k) {
    const bool n1 = d1.data()[k] != 0.0;
    const bool n2 = d2.data()[k] != 0.0;
    out.support1 += n1;
    out.support2 += n2;
    out.overlap += n1 && n2;
  }
  out.union_size = out.support1 + out.support2 - out.overlap;
  out.overlap_fraction = static_cast<double>(out.overlap) /
                         (static_cast<double>(out.rows) * out.cols);
  const DenseMatrix p = matmul_atb(d1, d2);
  for (double v : p.data()) out.product_nnz += v != 0.0;
  out.product_structural_nnz = out.product_nnz;
  out.product_frobenius = frobenius_norm(p);
  out.product_density = static_cast<double>(out.product_nnz) /
                        (static_cast<double>(out.cols) * out.cols);
  return out;
}

nlohmann::json FusionReport::to_json() const {
  nlohmann::json s = nlohmann::json::object();
  for (const auto& [id, e] : sparse) s[std::to_string(id)] = e.to_json();
  nlohmann::json l = nlohmann::json::object();
  for (const auto& [id, e] : lora) l[std::to_string(id)] = e.to_json();
  return {{"sources", sources},
          {"weights", weights},
          {"sparse", s},
          {"lora", l}};
}

FusionReport fusion_report(const SparseModelAdapter& a1,
                           const SparseModelAdapter& a2,
                           const LoraModelAdapter* lora1,
                           const LoraModelAdapter* lora2) {
  FusionReport report;
  report.sources = {source_name(a1.meta, 0), source_name(a2.meta, 1)};
  report.weights = {1.0, 1.0};
  for (const auto& [id, layer] : a1.layers) {
    auto it = a2.layers.find(id);
    if (it != a2.layers.end())
      report.sparse.emplace(id, interference(layer, it->second));
  }
  if (lora1 != nullptr && lora2 != nullptr) {
    for (const auto& [id, layer] : lora1->layers) {
      auto it = lora2->layers.find(id);
      if (it != lora2->layers.end())
        report.lora.emplace(id, interference(layer, it->second));
    }
  }
  return report;
}

nlohmann::json MultiEvalReport::to_json() const {
  nlohmann::json t = nlohmann::json::array();
  for (const Entry& e : tasks)
    t.push_back({{"name", e.name}, {"single", e.single}, {"fused", e.fused}});
  return {{"tasks", t},
          {"avg_single", avg_single},
          {"avg_fused", avg_fused},
          {"drop_points", drop_points},
          {"drop_percent", drop_percent}};
}

double class_accuracy(const Mlp& model, const Batch& batch) {
  const auto* labels = std::get_if<ClassTargets>(&batch.targets);
  if (labels == nullptr) {
    throw InvalidArgument("accuracy needs class targets");
  }
  return accuracy(predict(model, batch.inputs), *labels);
}

MultiEvalReport eval_multi(const Mlp& model, const ModelAdapter& fused,
                           std::span<const TaskEval> tasks, double alpha) {
  if (tasks.empty()) throw InvalidArgument("eval_multi: empty taskset");
  for (const TaskEval& t : tasks) {
    if (!t.single_accuracy) {
      throw InvalidArgument("eval_multi: task '" + t.name +
                            "' has no single-adapter baseline");
    }
  }
  AdapterRuntime rt(model);
  rt.load(fused, alpha, "fused");
  MultiEvalReport report;
  for (const TaskEval& t : tasks) {
    const double acc = class_accuracy(rt.model(), t.test);
    report.tasks.push_back({t.name, *t.single_accuracy, acc});
    report.avg_single += *t.single_accuracy;
    report.avg_fused += acc;
  }
  const double n = static_cast<double>(tasks.size());
  report.avg_single /= n;
  report.avg_fused /= n;
  report.drop_points = 100.0 * (report.avg_single - report.avg_fused);
  report.drop_percent =
      report.avg_single > 0.0
          ? 100.0 * (report.avg_single - report.avg_fused) / report.avg_single
          : 0.0;
  return report;
}

}  // namespace shira

// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "shira/error.hpp"

namespace shira {

namespace {

void reject_unknown_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> known,
                         const char* section) {
  if (!j.is_object()) {
    throw ConfigError(std::string(section) + ": expected an object");
  }
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(),
                     [&](const char* k) { return key == k; })) {
      throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
    }
  }
}

Batch draw(const TaskConfig& task, const DenseMatrix& centers,
           std::size_t count, Rng& rng) {
  DenseMatrix x(count, task.input_dim);
  ClassTargets y(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = rng.below(task.classes);
    y[i] = label;
    auto row = x.row(i);
    auto center = centers.row(label);
    for (std::size_t d = 0; d < task.input_dim; ++d)
      row[d] = center[d] + task.noise * rng.gaussian();
  }
  return Batch{std::move(x), std::move(y)};
}

DenseMatrix class_centers(const TaskConfig& task) {
  Rng rng(task.seed);
  return rand_matrix(rng, task.classes, task.input_dim,
                     Distribution::gaussian(task.center_scale));
}

void validate(const TaskConfig& task) {
  if (task.input_dim == 0 || task.classes < 2 || task.train_samples == 0 ||
      task.test_samples == 0) {
    throw ConfigError("task: input_dim >= 1, classes >= 2 and sample counts "
                      ">= 1 required");
  }
}

}  // namespace

nlohmann::json TaskConfig::to_json() const {
  return {{"input_dim", input_dim},         {"classes", classes},
          {"train_samples", train_samples}, {"test_samples", test_samples},
          {"center_scale", center_scale},   {"noise", noise},
          {"seed", seed}};
}

TaskConfig TaskConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"input_dim", "classes", "train_samples", "test_samples",
                       "center_scale", "noise", "seed"},
                      "task");
  TaskConfig t;
  t.input_dim = j.value("input_dim", t.input_dim);
  t.classes = j.value("classes", t.classes);
  t.train_samples = j.value("train_samples", t.train_samples);
  t.test_samples = j.value("test_samples", t.test_samples);
  t.center_scale = j.value("center_scale", t.center_scale);
  t.noise = j.value("noise", t.noise);
  t.seed = j.value("seed", t.seed);
  validate(t);
  return t;
}

nlohmann::json StyleConfig::to_json() const {
  return {{"seed", seed},
          {"angle", angle},
          {"planes", planes},
          {"permuted_classes", permuted_classes},
          {"slot", slot},
          {"slots", slots},
          {"pool_seed", pool_seed}};
}

StyleConfig StyleConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"seed", "angle", "planes", "permuted_classes", "slot",
                       "slots", "pool_seed"},
                      "style");
  StyleConfig s;
  s.seed = j.value("seed", s.seed);
  s.angle = j.value("angle", s.angle);
  s.planes = j.value("planes", s.planes);
  s.permuted_classes = j.value("permuted_classes", s.permuted_classes);
  s.slot = j.value("slot", s.slot);
  s.slots = j.value("slots", s.slots);
  s.pool_seed = j.value("pool_seed", s.pool_seed);
  return s;
}

StyleTransform make_style_transform(const TaskConfig& task,
                                    const StyleConfig& style) {
  validate(task);
  if (style.slots == 0 || style.slot >= style.slots) {
    throw ConfigError("style: slot must be below slots");
  }
  if (2 * style.planes * style.slots > task.input_dim) {
    throw ConfigError("style: " + std::to_string(style.slots) + " x " +
                      std::to_string(style.planes) +
                      " disjoint planes do not fit in " +
                      std::to_string(task.input_dim) + " input dims");
  }
  if (style.permuted_classes * style.slots > task.classes) {
    throw ConfigError("style: permuted_classes exceeds class count");
  }
  // With one slot the style owns its shuffle; with several, all styles
  // share the pool shuffle and take disjoint blocks of it.
  Rng rng(style.slots == 1 ? style.seed : style.pool_seed);

  // Random disjoint coordinate pairs via a Fisher-Yates shuffle.
  std::vector<std::size_t> dims(task.input_dim);
  std::iota(dims.begin(), dims.end(), std::size_t{0});
  for (std::size_t i = dims.size(); i > 1; --i)
    std::swap(dims[i - 1], dims[rng.below(i)]);
  const std::size_t dim_base = 2 * style.planes * style.slot;
  StyleTransform out;
  out.rotation = DenseMatrix::identity(task.input_dim);
  const double c = std::cos(style.angle);
  const double s = std::sin(style.angle);
  for (std::size_t p = 0; p < style.planes; ++p) {
    const std::size_t i = dims[dim_base + 2 * p];
    const std::size_t j = dims[dim_base + 2 * p + 1];
    out.rotation(i, i) = c;
    out.rotation(i, j) = -s;
    out.rotation(j, i) = s;
    out.rotation(j, j) = c;
  }

  std::vector<std::size_t> classes(task.classes);
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  for (std::size_t i = classes.size(); i > 1; --i)
    std::swap(classes[i - 1], classes[rng.below(i)]);
  out.relabel.resize(task.classes);
  std::iota(out.relabel.begin(), out.relabel.end(), std::size_t{0});
  // Cycle the first `permuted_classes` shuffled classes by one position.
  const std::size_t k = style.permuted_classes;
  const std::size_t class_base = k * style.slot;
  for (std::size_t i = 0; k >= 2 && i < k; ++i)
    out.relabel[classes[class_base + i]] = classes[class_base + (i + 1) % k];
  return out;
}

TaskData make_base_task(const TaskConfig& task) {
  validate(task);
  const DenseMatrix centers = class_centers(task);
  Rng train_rng(task.seed ^ 0x7472616e00000000ULL);
  Rng test_rng(task.seed ^ 0x7465737400000000ULL);
  return {draw(task, centers, task.train_samples, train_rng),
          draw(task, centers, task.test_samples, test_rng)};
}

TaskData make_style_task(const TaskConfig& task, const StyleConfig& style) {
  const StyleTransform t = make_style_transform(task, style);
  const DenseMatrix centers = class_centers(task);
  Rng train_rng(task.seed ^ style.seed ^ 0x5354594c45000000ULL);
  Rng test_rng(task.seed ^ style.seed ^ 0x5354455354000000ULL);
  TaskData data{draw(task, centers, task.train_samples, train_rng),
                draw(task, centers, task.test_samples, test_rng)};
  for (Batch* b : {&data.train, &data.test}) {
    b->inputs = matmul_abt(b->inputs, t.rotation);
    for (auto& label : std::get<ClassTargets>(b->targets))
      label = t.relabel[label];
  }
  return data;
}

Batch sample_batch(const Batch& data, std::size_t count, Rng& rng) {
  data.validate();
  const std::size_t n = data.inputs.rows();
  DenseMatrix x(count, data.inputs.cols());
  std::vector<std::size_t> picks(count);
  for (std::size_t i = 0; i < count; ++i) {
    picks[i] = rng.below(n);
    auto src = data.inputs.row(picks[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  Targets targets = std::visit(
      [&](const auto& t) -> Targets {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, ClassTargets>) {
          ClassTargets out(count);
          for (std::size_t i = 0; i < count; ++i) out[i] = t[picks[i]];
          return out;
        } else {
          DenseMatrix out(count, t.cols());
          for (std::size_t i = 0; i < count; ++i) {
            auto src = t.row(picks[i]);
            std::copy(src.begin(), src.end(), out.row(i).begin());
          }
          return out;
        }
      },
      data.targets);
  return Batch{std::move(x), std::move(targets)};
}

Batch head_batch(const Batch& data, std::size_t count) {
  return slice_batch(data, 0, std::min(count, data.inputs.rows()));
}

Batch slice_batch(const Batch& data, std::size_t start, std::size_t count) {
  data.validate();
  if (start + count > data.inputs.rows() || count == 0) {
    throw InvalidArgument("slice_batch: rows [" + std::to_string(start) + ", " +
                          std::to_string(start + count) + ") outside " +
                          std::to_string(data.inputs.rows()));
  }
  auto rows_of = [&](const DenseMatrix& m) {
    const auto first = m.data().begin() + static_cast<long>(start * m.cols());
    return DenseMatrix(count, m.cols(),
                       std::vector<double>(first, first + static_cast<long>(
                                                              count * m.cols())));
  };
  Targets targets = std::visit(
      [&](const auto& t) -> Targets {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, ClassTargets>) {
          const auto first = t.begin() + static_cast<long>(start);
          return ClassTargets(first, first + static_cast<long>(count));
        } else {
          return rows_of(t);
        }
      },
      data.targets);
  return Batch{rows_of(data.inputs), std::move(targets)};
}

}  // namespace shira

// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "shira/error.hpp"
#include "shira/task.hpp"

namespace shira {

using nlohmann::json;

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (accumulation == 0) throw ConfigError("train: accumulation must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 &&
        adam.beta2 < 1.0 && adam.epsilon > 0.0)) {
    throw ConfigError("train: adam betas must be in [0, 1) and epsilon > 0");
  }
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) {
    throw ConfigError("train: mask_fraction must be in (0, 1)");
  }
  if (lora_rank == 0) throw ConfigError("train: lora_rank must be >= 1");
}

double TrainConfig::lr_at(std::size_t step) const {
  if (schedule == LrSchedule::constant || steps == 0) return lr;
  return lr * (1.0 - static_cast<double>(step) / static_cast<double>(steps));
}

json TrainConfig::to_json() const {
  return {
      {"steps", steps},
      {"batch_size", batch_size},
      {"accumulation", accumulation},
      {"lr", lr},
      {"optimizer", optimizer == OptimizerKind::adam ? "adam" : "sgd"},
      {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2},
                {"epsilon", adam.epsilon}}},
      {"schedule", schedule == LrSchedule::constant ? "constant"
                                                    : "linear_decay"},
      {"loss", std::string(to_string(loss))},
      {"seed", seed},
      {"adapted_layers", adapted_layers},
      {"train_bias", train_bias},
      {"mask_strategy", std::string(to_string(mask_strategy))},
      {"mask_fraction", mask_fraction},
      {"struct_diagonal", struct_diagonal},
      {"masking", masking == MaskingPath::sparse_state ? "sparse_state"
                                                       : "dense_hook"},
      {"calib_batches", calib_batches},
      {"calib_batch_size", calib_batch_size},
      {"lora_rank", lora_rank},
      {"lora_alpha", lora_alpha},
  };
}

TrainConfig TrainConfig::from_json(const json& j) {
  static const char* known[] = {
      "steps",         "batch_size",      "accumulation", "lr",
      "optimizer",     "adam",            "schedule",     "loss",
      "seed",          "adapted_layers",  "train_bias",   "mask_strategy",
      "mask_fraction", "struct_diagonal", "masking",      "calib_batches",
      "calib_batch_size", "lora_rank",    "lora_alpha"};
  if (!j.is_object()) throw ConfigError("train: expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(std::begin(known), std::end(known),
                     [&](const char* k) { return key == k; })) {
      throw ConfigError("train: unknown key '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.accumulation = j.value("accumulation", c.accumulation);
    c.lr = j.value("lr", c.lr);
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") c.optimizer = OptimizerKind::adam;
    else if (opt == "sgd") c.optimizer = OptimizerKind::sgd;
    else throw ConfigError("train: unknown optimizer '" + opt + "'");
    if (j.contains("adam")) {
      const json& a = j.at("adam");
      for (const auto& [key, _] : a.items()) {
        if (key != "beta1" && key != "beta2" && key != "epsilon")
          throw ConfigError("train.adam: unknown key '" + key + "'");
      }
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
    }
    const std::string sched = j.value("schedule", std::string("linear_decay"));
    if (sched == "constant") c.schedule = LrSchedule::constant;
    else if (sched == "linear_decay") c.schedule = LrSchedule::linear_decay;
    else throw ConfigError("train: unknown schedule '" + sched + "'");
    c.loss = parse_loss_kind(j.value("loss", std::string("softmax_ce")));
    c.seed = j.value("seed", c.seed);
    c.adapted_layers =
        j.value("adapted_layers", std::vector<std::size_t>{});
    c.train_bias = j.value("train_bias", c.train_bias);
    c.mask_strategy =
        parse_mask_strategy(j.value("mask_strategy", std::string("wm")));
    c.mask_fraction = j.value("mask_fraction", c.mask_fraction);
    c.struct_diagonal = j.value("struct_diagonal", c.struct_diagonal);
    const std::string masking = j.value("masking", std::string("sparse_state"));
    if (masking == "sparse_state") c.masking = MaskingPath::sparse_state;
    else if (masking == "dense_hook") c.masking = MaskingPath::dense_hook;
    else throw ConfigError("train: unknown masking path '" + masking + "'");
    c.calib_batches = j.value("calib_batches", c.calib_batches);
    c.calib_batch_size = j.value("calib_batch_size", c.calib_batch_size);
    c.lora_rank = j.value("lora_rank", c.lora_rank);
    c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainConfig::digest() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json TrainReport::to_json() const {
  return {{"method", method},
          {"loss_curve", loss_curve},
          {"metrics", metrics},
          {"params",
           {{"total", params.total},
            {"trainable", params.trainable},
            {"changed", params.changed}}},
          {"optimizer_state",
           {{"dense_equivalent_floats", state.dense_equivalent_floats},
            {"held_floats", state.held_floats}}},
          {"config", config}};
}

// ---------------------------------------------------------------- helpers

EvalMetrics evaluate(const Mlp& model, const Batch& data, LossKind kind) {
  data.validate();
  const DenseMatrix out = predict(model, data.inputs);
  EvalMetrics m;
  m.loss = loss(out, data.targets, kind);
  if (const auto* labels = std::get_if<ClassTargets>(&data.targets))
    m.accuracy = accuracy(out, *labels);
  return m;
}

std::size_t count_changed(const Mlp& before, const Mlp& after) {
  if (before.layer_count() != after.layer_count())
    throw ShapeError("count_changed: layer count mismatch");
  std::size_t n = 0;
  auto diff = [&n](std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("count_changed: size mismatch");
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) ++n;
  };
  for (std::size_t i = 0; i < before.layer_count(); ++i) {
    diff(before.weight(i).data(), after.weight(i).data());
    diff(before.bias(i), after.bias(i));
  }
  return n;
}

GradientSet mask_gradients(const GradientSet& grads, const ModelMask& mask) {
  GradientSet out;
  out.weight.reserve(grads.layer_count());
  for (std::size_t i = 0; i < grads.layer_count(); ++i) {
    const DenseMatrix& g = grads.weight[i];
    DenseMatrix masked(g.rows(), g.cols(), 0.0);
    if (auto it = mask.layers.find(i); it != mask.layers.end()) {
      if (it->second.shape() != g.shape()) {
        throw ShapeError("mask_gradients: layer " + std::to_string(i) +
                         " mask " + to_string(it->second.shape()) +
                         " vs gradient " + to_string(g.shape()));
      }
      for (Coord c : it->second.coords()) masked(c.row, c.col) = g(c.row, c.col);
    }
    out.weight.push_back(std::move(masked));
    out.bias.emplace_back(grads.bias[i].size(), 0.0);
  }
  for (const auto& [idx, _] : mask.layers) {
    if (idx >= grads.layer_count()) {
      throw ShapeError("mask_gradients: mask for layer " +
                       std::to_string(idx) + " but only " +
                       std::to_string(grads.layer_count()) + " layers");
    }
  }
  return out;
}

SparseOptimState SparseOptimState::for_mask(const ModelMask& mask) {
  SparseOptimState s;
  for (const auto& [idx, m] : mask.layers) {
    s.layers[idx].m.assign(m.size(), 0.0);
    s.layers[idx].v.assign(m.size(), 0.0);
  }
  return s;
}

std::size_t SparseOptimState::float_count() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, l] : layers) n += l.m.size() + l.v.size();
  return n;
}

namespace {

// One Adam update for a single scalar; shared by the sparse and dense paths
// so that both produce identical bits.
inline void adam_update(double& param, double& m, double& v, double g,
                        double lr, const AdamParams& p, double bc1,
                        double bc2) {
  m = p.beta1 * m + (1.0 - p.beta1) * g;
  v = p.beta2 * v + (1.0 - p.beta2) * g * g;
  const double m_hat = m / bc1;
  const double v_hat = v / bc2;
  param = param - lr * m_hat / (std::sqrt(v_hat) + p.epsilon);
}

std::pair<double, double> bias_corrections(const AdamParams& p,
                                           std::uint64_t step) {
  const auto t = static_cast<double>(step);
  return {1.0 - std::pow(p.beta1, t), 1.0 - std::pow(p.beta2, t)};
}

}  // namespace

void adam_sparse_step(SparseLayerState& state, DenseMatrix& weight,
                      std::span<const Coord> coords,
                      std::span<const double> coord_grads, double lr,
                      const AdamParams& params, std::uint64_t step) {
  if (state.m.size() != coords.size() || state.v.size() != coords.size() ||
      coord_grads.size() != coords.size()) {
    throw ShapeError("adam_sparse_step: state/grad/coord lengths disagree");
  }
  if (step == 0) throw InvalidArgument("adam_sparse_step: step is 1-based");
  const auto [bc1, bc2] = bias_corrections(params, step);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    adam_update(weight(coords[i].row, coords[i].col), state.m[i], state.v[i],
                coord_grads[i], lr, params, bc1, bc2);
  }
}

void adam_dense_step(DenseAdamState& state, std::span<double> params_out,
                     std::span<const double> grads, double lr,
                     const AdamParams& params, std::uint64_t step) {
  if (state.m.size() != params_out.size() || grads.size() != params_out.size())
    throw ShapeError("adam_dense_step: state/grad/param lengths disagree");
  if (step == 0) throw InvalidArgument("adam_dense_step: step is 1-based");
  const auto [bc1, bc2] = bias_corrections(params, step);
  for (std::size_t i = 0; i < params_out.size(); ++i)
    adam_update(params_out[i], state.m[i], state.v[i], grads[i], lr, params,
                bc1, bc2);
}

namespace {

void sgd_dense_step(std::span<double> params_out, std::span<const double> grads,
                    double lr) {
  for (std::size_t i = 0; i < params_out.size(); ++i)
    params_out[i] = params_out[i] - lr * grads[i];
}

void check_finite(double value, std::size_t step) {
  if (!std::isfinite(value)) {
    throw NumericError("training diverged: non-finite loss at step " +
                       std::to_string(step),
                       step);
  }
}

// Forward/backward over `accumulation` micro-batches; gradients are summed
// then divided by the micro-batch count.
std::pair<double, GradientSet> accumulate(const Mlp& model, const Batch& train,
                                          const TrainConfig& cfg, Rng& rng) {
  GradientSet total = GradientSet::zeros_like(model);
  double loss_sum = 0.0;
  for (std::size_t a = 0; a < cfg.accumulation; ++a) {
    Batch batch = sample_batch(train, cfg.batch_size, rng);
    auto pass = forward(model, batch.inputs);
    loss_sum += loss(pass.output, batch.targets, cfg.loss);
    total.add(backward(model, pass.cache, batch.targets, cfg.loss));
  }
  const double inv = 1.0 / static_cast<double>(cfg.accumulation);
  if (cfg.accumulation > 1) total.scale(inv);
  return {loss_sum * inv, std::move(total)};
}

void record_eval(TrainReport& report, const Mlp& model, const Batch* eval,
                 LossKind kind) {
  if (!eval) return;
  const EvalMetrics m = evaluate(model, *eval, kind);
  report.metrics["eval_loss"] = m.loss;
  if (std::holds_alternative<ClassTargets>(eval->targets))
    report.metrics["eval_accuracy"] = m.accuracy;
}

void record_train_loss(TrainReport& report) {
  if (report.loss_curve.empty()) return;
  const std::size_t tail = std::min<std::size_t>(10, report.loss_curve.size());
  double s = 0.0;
  for (std::size_t i = report.loss_curve.size() - tail;
       i < report.loss_curve.size(); ++i)
    s += report.loss_curve[i];
  report.metrics["final_train_loss"] = s / static_cast<double>(tail);
}

}  // namespace

// ---------------------------------------------------------------- masks

ModelMask build_mask(const Mlp& model, const TrainConfig& cfg,
                     const Batch& train) {
  const MaskBudget budget(cfg.mask_fraction);
  const auto layers = resolve_layers(model, cfg.adapted_layers);
  ModelMask mask;
  switch (cfg.mask_strategy) {
    case MaskStrategy::structured:
      for (std::size_t idx : layers)
        mask.layers.emplace(idx, make_struct_mask(model.weight(idx).shape(),
                                                  budget, cfg.struct_diagonal));
      return mask;
    case MaskStrategy::random: {
      Rng rng(cfg.seed ^ 0x6d61736b00000000ULL);
      for (std::size_t idx : layers)
        mask.layers.emplace(
            idx, make_random_mask(model.weight(idx).shape(), budget, rng));
      return mask;
    }
    case MaskStrategy::weight_magnitude:
      for (std::size_t idx : layers)
        mask.layers.emplace(idx, make_wm_mask(model.weight(idx), budget));
      return mask;
    case MaskStrategy::gradient:
    case MaskStrategy::snip: {
      if (cfg.calib_batches == 0) {
        throw ConfigError("grad/snip masks need calib_batches >= 1");
      }
      // Calibration uses the leading training rows, split into batches.
      std::vector<Batch> calib;
      const std::size_t n = train.inputs.rows();
      for (std::size_t b = 0; b < cfg.calib_batches; ++b) {
        const std::size_t start = b * cfg.calib_batch_size;
        if (start >= n) break;
        const std::size_t count = std::min(cfg.calib_batch_size, n - start);
        calib.push_back(slice_batch(train, start, count));
      }
      return cfg.mask_strategy == MaskStrategy::gradient
                 ? make_grad_mask(model, calib, budget, cfg.loss, layers)
                 : make_snip_mask(model, calib, budget, cfg.loss, layers);
    }
    case MaskStrategy::fused:
    case MaskStrategy::custom:
      break;
  }
  throw ConfigError("build_mask: strategy '" +
                    std::string(to_string(cfg.mask_strategy)) +
                    "' cannot be built from a config");
}

// ---------------------------------------------------------------- SHiRA

ShiraResult train_shira(const Mlp& model, const ModelMask& mask,
                        const Batch& train, const TrainConfig& cfg,
                        const Batch* eval) {
  cfg.validate();
  train.validate();
  mask.validate_against(model);

  ShiraResult result{model, {}, {}};
  Mlp& net = result.model;
  TrainReport& report = result.report;
  report.method = "shira-" + std::string(to_string(cfg.mask_strategy));
  report.config = cfg.to_json();

  SparseOptimState sparse_state = SparseOptimState::for_mask(mask);
  std::map<std::size_t, DenseAdamState> dense_state;
  std::map<std::size_t, DenseAdamState> bias_state;
  const bool adam = cfg.optimizer == OptimizerKind::adam;
  if (adam && cfg.masking == MaskingPath::dense_hook) {
    for (const auto& [idx, _] : mask.layers)
      dense_state.emplace(idx, DenseAdamState(net.weight(idx).size()));
  }
  if (adam && cfg.train_bias) {
    for (const auto& [idx, _] : mask.layers)
      bias_state.emplace(idx, DenseAdamState(net.bias(idx).size()));
  }

  Rng rng(cfg.seed);
  std::vector<double> coord_grads;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    auto [step_loss, grads] = accumulate(net, train, cfg, rng);
    check_finite(step_loss, step);
    report.loss_curve.push_back(step_loss);
    const double lr = cfg.lr_at(step);
    const std::uint64_t t = step + 1;

    if (cfg.masking == MaskingPath::sparse_state) {
      for (const auto& [idx, m] : mask.layers) {
        const DenseMatrix& g = grads.weight[idx];
        coord_grads.resize(m.size());
        for (std::size_t i = 0; i < m.size(); ++i)
          coord_grads[i] = g(m.coords()[i].row, m.coords()[i].col);
        DenseMatrix& w = net.weight(idx);
        if (adam) {
          adam_sparse_step(sparse_state.layers.at(idx), w, m.coords(),
                           coord_grads, lr, cfg.adam, t);
        } else {
          for (std::size_t i = 0; i < m.size(); ++i) {
            double& p = w(m.coords()[i].row, m.coords()[i].col);
            p = p - lr * coord_grads[i];
          }
        }
      }
    } else {
      const GradientSet masked = mask_gradients(grads, mask);
      for (const auto& [idx, _] : mask.layers) {
        auto w = net.weight(idx).data();
        if (adam)
          adam_dense_step(dense_state.at(idx), w, masked.weight[idx].data(),
                          lr, cfg.adam, t);
        else
          sgd_dense_step(w, masked.weight[idx].data(), lr);
      }
    }
    if (cfg.train_bias) {
      for (const auto& [idx, _] : mask.layers) {
        if (adam)
          adam_dense_step(bias_state.at(idx), net.bias(idx), grads.bias[idx],
                          lr, cfg.adam, t);
        else
          sgd_dense_step(net.bias(idx), grads.bias[idx], lr);
      }
    }
  }

  result.adapter.meta = {{"method", "shira"},
                         {"strategy", std::string(to_string(cfg.mask_strategy))},
                         {"train_config_digest", cfg.digest()}};
  for (const auto& [idx, m] : mask.layers) {
    SparseAdapter a = extract_sparse(model.weight(idx), net.weight(idx), m);
    a.strategy = cfg.mask_strategy;
    a.source_layer = static_cast<std::uint32_t>(idx);
    result.adapter.layers.emplace(static_cast<std::uint32_t>(idx),
                                  std::move(a));
  }

  std::size_t dense_floats = 0;
  std::size_t bias_trainable = 0;
  for (const auto& [idx, _] : mask.layers) {
    dense_floats += net.weight(idx).size();
    if (cfg.train_bias) bias_trainable += net.bias(idx).size();
  }
  report.params.total = net.parameter_count();
  report.params.trainable = mask.total_size() + bias_trainable;
  report.params.changed = count_changed(model, net);
  if (adam) {
    report.state.dense_equivalent_floats = 2 * (dense_floats + bias_trainable);
    report.state.held_floats =
        (cfg.masking == MaskingPath::sparse_state ? sparse_state.float_count()
                                                  : 2 * dense_floats) +
        2 * bias_trainable;
  }
  record_train_loss(report);
  record_eval(report, net, eval, cfg.loss);
  return result;
}

// ---------------------------------------------------------------- LoRA

namespace {

struct LoraCache {
  std::vector<DenseMatrix> inputs;
  std::vector<DenseMatrix> pre;
  std::map<std::uint32_t, DenseMatrix> low;  // x B^T per adapted layer
};

DenseMatrix lora_forward(const LoraMlp& net, const DenseMatrix& inputs,
                         LoraCache* cache) {
  const Mlp& base = net.base;
  if (inputs.cols() != base.input_dim()) {
    throw ShapeError("LoraMlp: input width " + std::to_string(inputs.cols()) +
                     " != " + std::to_string(base.input_dim()));
  }
  DenseMatrix x = inputs;
  for (std::size_t i = 0; i < base.layer_count(); ++i) {
    const LinearLayer& layer = base.layer(i);
    DenseMatrix z = matmul_abt(x, layer.weight);
    if (auto it = net.factors.find(static_cast<std::uint32_t>(i));
        it != net.factors.end()) {
      const LoraAdapter& f = it->second;
      DenseMatrix u = matmul_abt(x, f.b);       // batch x r
      DenseMatrix branch = matmul_abt(u, f.a);  // batch x out
      add_scaled_inplace(z, branch, f.alpha_lora);
      if (cache) cache->low.emplace(static_cast<std::uint32_t>(i), std::move(u));
    }
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
    }
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(z);
    }
    activate_inplace(z, layer.activation);
    x = std::move(z);
  }
  return x;
}

LoraGradients lora_backward(const LoraMlp& net, const LoraCache& cache,
                        const DenseMatrix& output, const Targets& targets,
                        LossKind kind) {
  const Mlp& base = net.base;
  DenseMatrix grad = loss_grad(output, targets, kind);
  LoraGradients out;
  for (std::size_t i = base.layer_count(); i-- > 0;) {
    const LinearLayer& layer = base.layer(i);
    activation_backward_inplace(grad, cache.pre[i], layer.activation);
    const auto key = static_cast<std::uint32_t>(i);
    DenseMatrix grad_in;
    if (i > 0) grad_in = matmul(grad, layer.weight);
    if (auto it = net.factors.find(key); it != net.factors.end()) {
      const LoraAdapter& f = it->second;
      const double s = f.alpha_lora;
      DenseMatrix ga = matmul(grad, f.a);  // batch x r
      DenseMatrix da = matmul_atb(grad, cache.low.at(key));
      for (double& v : da.data()) v *= s;
      DenseMatrix db = matmul_atb(ga, cache.inputs[i]);
      for (double& v : db.data()) v *= s;
      if (i > 0) add_scaled_inplace(grad_in, matmul(ga, f.b), s);
      out.a.emplace(key, std::move(da));
      out.b.emplace(key, std::move(db));
    }
    if (i > 0) grad = std::move(grad_in);
  }
  return out;
}

}  // namespace

LoraGradients lora_gradients(const LoraMlp& net, const Batch& batch,
                             LossKind kind) {
  batch.validate();
  LoraCache cache;
  const DenseMatrix out = lora_forward(net, batch.inputs, &cache);
  return lora_backward(net, cache, out, batch.targets, kind);
}

DenseMatrix LoraMlp::predict(const DenseMatrix& inputs) const {
  return lora_forward(*this, inputs, nullptr);
}

Mlp LoraMlp::fused() const { return apply_to_model(base, adapter(), 1.0); }

LoraModelAdapter LoraMlp::adapter() const {
  LoraModelAdapter out;
  out.layers = factors;
  return out;
}

LoraResult train_lora(const Mlp& model, const Batch& train,
                      const TrainConfig& cfg, const Batch* eval) {
  cfg.validate();
  train.validate();
  const auto layers = resolve_layers(model, cfg.adapted_layers);

  LoraResult result;
  LoraMlp& net = result.model;
  net.base = model;
  Rng init_rng(cfg.seed ^ 0x6c6f726100000000ULL);
  for (std::size_t idx : layers) {
    const DenseMatrix& w = model.weight(idx);
    if (cfg.lora_rank > std::min(w.rows(), w.cols())) {
      throw InvalidArgument("train_lora: rank " +
                            std::to_string(cfg.lora_rank) +
                            " exceeds layer " + std::to_string(idx) + " " +
                            to_string(w.shape()));
    }
    LoraAdapter f;
    f.a = rand_matrix(init_rng, w.rows(), cfg.lora_rank,
                      Distribution::gaussian(
                          1.0 / std::sqrt(static_cast<double>(w.rows()))));
    f.b = DenseMatrix(cfg.lora_rank, w.cols());
    f.alpha_lora = cfg.lora_alpha;
    net.factors.emplace(static_cast<std::uint32_t>(idx), std::move(f));
  }

  TrainReport& report = result.report;
  report.method = "lora";
  report.config = cfg.to_json();

  const bool adam = cfg.optimizer == OptimizerKind::adam;
  std::map<std::uint32_t, DenseAdamState> state_a, state_b;
  if (adam) {
    for (const auto& [key, f] : net.factors) {
      state_a.emplace(key, DenseAdamState(f.a.size()));
      state_b.emplace(key, DenseAdamState(f.b.size()));
    }
  }

  Rng rng(cfg.seed);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    LoraGradients total;
    double loss_sum = 0.0;
    for (std::size_t acc = 0; acc < cfg.accumulation; ++acc) {
      Batch batch = sample_batch(train, cfg.batch_size, rng);
      LoraCache cache;
      DenseMatrix out = lora_forward(net, batch.inputs, &cache);
      loss_sum += loss(out, batch.targets, cfg.loss);
      LoraGradients g = lora_backward(net, cache, out, batch.targets, cfg.loss);
      if (acc == 0) {
        total = std::move(g);
      } else {
        for (auto& [k, m] : total.a) add_scaled_inplace(m, g.a.at(k), 1.0);
        for (auto& [k, m] : total.b) add_scaled_inplace(m, g.b.at(k), 1.0);
      }
    }
    const double inv = 1.0 / static_cast<double>(cfg.accumulation);
    if (cfg.accumulation > 1) {
      for (auto& [k, m] : total.a) for (double& v : m.data()) v *= inv;
      for (auto& [k, m] : total.b) for (double& v : m.data()) v *= inv;
    }
    const double step_loss = loss_sum * inv;
    check_finite(step_loss, step);
    report.loss_curve.push_back(step_loss);
    const double lr = cfg.lr_at(step);
    for (auto& [key, f] : net.factors) {
      if (adam) {
        adam_dense_step(state_a.at(key), f.a.data(), total.a.at(key).data(), lr,
                        cfg.adam, step + 1);
        adam_dense_step(state_b.at(key), f.b.data(), total.b.at(key).data(), lr,
                        cfg.adam, step + 1);
      } else {
        sgd_dense_step(f.a.data(), total.a.at(key).data(), lr);
        sgd_dense_step(f.b.data(), total.b.at(key).data(), lr);
      }
    }
  }

  result.adapter = net.adapter();
  result.adapter.meta = {{"method", "lora"},
                         {"rank", cfg.lora_rank},
                         {"train_config_digest", cfg.digest()}};

  std::size_t trainable = 0;
  for (const auto& [_, f] : net.factors) trainable += f.a.size() + f.b.size();
  const Mlp fused = net.fused();
  report.params.total = model.parameter_count();
  report.params.trainable = trainable;
  report.params.changed = count_changed(model, fused);
  if (adam) {
    report.state.dense_equivalent_floats = 2 * trainable;
    report.state.held_floats = 2 * trainable;
  }
  record_train_loss(report);
  if (eval) {
    const DenseMatrix out = net.predict(eval->inputs);
    report.metrics["eval_loss"] = loss(out, eval->targets, cfg.loss);
    if (const auto* labels = std::get_if<ClassTargets>(&eval->targets))
      report.metrics["eval_accuracy"] = accuracy(out, *labels);
  }
  return result;
}

// ---------------------------------------------------------------- dense

DenseResult train_full(const Mlp& model, const Batch& train,
                       const TrainConfig& cfg, const Batch* eval) {
  cfg.validate();
  train.validate();
  DenseResult result{model, {}};
  Mlp& net = result.model;
  TrainReport& report = result.report;
  report.method = "full";
  report.config = cfg.to_json();

  const bool adam = cfg.optimizer == OptimizerKind::adam;
  std::vector<DenseAdamState> w_state, b_state;
  if (adam) {
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
      w_state.emplace_back(net.weight(i).size());
      b_state.emplace_back(net.bias(i).size());
    }
  }
  Rng rng(cfg.seed);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    auto [step_loss, grads] = accumulate(net, train, cfg, rng);
    check_finite(step_loss, step);
    report.loss_curve.push_back(step_loss);
    const double lr = cfg.lr_at(step);
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
      if (adam) {
        adam_dense_step(w_state[i], net.weight(i).data(),
                        grads.weight[i].data(), lr, cfg.adam, step + 1);
        adam_dense_step(b_state[i], net.bias(i), grads.bias[i], lr, cfg.adam,
                        step + 1);
      } else {
        sgd_dense_step(net.weight(i).data(), grads.weight[i].data(), lr);
        sgd_dense_step(net.bias(i), grads.bias[i], lr);
      }
    }
  }
  report.params.total = net.parameter_count();
  report.params.trainable = report.params.total;
  report.params.changed = count_changed(model, net);
  if (adam) {
    report.state.dense_equivalent_floats = 2 * report.params.total;
    report.state.held_floats = 2 * report.params.total;
  }
  record_train_loss(report);
  record_eval(report, net, eval, cfg.loss);
  return result;
}

DenseResult train_frozen(const Mlp& model, const Batch& train,
                         const TrainConfig& cfg, const Batch* eval) {
  cfg.validate();
  train.validate();
  DenseResult result{model, {}};
  TrainReport& report = result.report;
  report.method = "frozen";
  report.config = cfg.to_json();
  report.params.total = model.parameter_count();
  report.metrics["train_loss"] = evaluate(model, train, cfg.loss).loss;
  record_eval(report, model, eval, cfg.loss);
  return result;
}

}  // namespace shira

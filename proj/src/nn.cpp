// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "shira/error.hpp"

namespace shira {

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "none") return Activation::none;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(LossKind kind) {
  return kind == LossKind::mse ? "mse" : "softmax_ce";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "mse") return LossKind::mse;
  if (name == "softmax_ce" || name == "ce") return LossKind::softmax_ce;
  throw InvalidArgument("unknown loss kind '" + std::string(name) + "'");
}

void activate_inplace(DenseMatrix& z, Activation act) {
  switch (act) {
    case Activation::none:
      return;
    case Activation::relu:
      for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
      return;
    case Activation::tanh:
      for (double& v : z.data()) v = std::tanh(v);
      return;
  }
}

void activation_backward_inplace(DenseMatrix& grad, const DenseMatrix& pre,
                                 Activation act) {
  auto g = grad.data();
  auto p = pre.data();
  switch (act) {
    case Activation::none:
      return;
    case Activation::relu:
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(p[i] > 0.0)) g[i] = 0.0;
      return;
    case Activation::tanh:
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double t = std::tanh(p[i]);
        g[i] *= 1.0 - t * t;
      }
      return;
  }
}

Mlp::Mlp(std::size_t input_dim, std::vector<LinearLayer> layers)
    : input_dim_(input_dim), layers_(std::move(layers)) {
  validate();
}

Mlp Mlp::random(std::size_t input_dim, std::span<const std::size_t> widths,
                Activation hidden, Activation output_activation, Rng& rng) {
  std::vector<LinearLayer> layers;
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    LinearLayer layer;
    layer.weight = rand_matrix(rng, widths[i], in, Distribution::kaiming());
    layer.bias.assign(widths[i], 0.0);
    layer.activation = i + 1 == widths.size() ? output_activation : hidden;
    layers.push_back(std::move(layer));
    in = widths[i];
  }
  return Mlp(input_dim, std::move(layers));
}

std::size_t Mlp::output_dim() const noexcept {
  return layers_.empty() ? input_dim_ : layers_.back().out_dim();
}

std::size_t Mlp::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::uint64_t Mlp::fingerprint() const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::span<const double> values) {
    for (double v : values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h ^= bits;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& l : layers_) {
    mix(l.weight.data());
    mix(l.bias);
  }
  return h;
}

void Mlp::validate() const {
  if (input_dim_ == 0) throw ShapeError("Mlp: input_dim must be >= 1");
  std::size_t in = input_dim_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.cols() != in || l.weight.rows() == 0) {
      throw ShapeError("Mlp: layer " + std::to_string(i) + " weight is " +
                       to_string(l.weight.shape()) + ", expected input width " +
                       std::to_string(in));
    }
    if (l.bias.size() != l.weight.rows()) {
      throw ShapeError("Mlp: layer " + std::to_string(i) + " bias length " +
                       std::to_string(l.bias.size()) + " != " +
                       std::to_string(l.weight.rows()));
    }
    in = l.weight.rows();
  }
}

std::size_t target_count(const Targets& targets) {
  return std::visit(
      [](const auto& t) -> std::size_t {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, ClassTargets>) return t.size();
        else return t.rows();
      },
      targets);
}

void Batch::validate() const {
  if (inputs.rows() == 0) throw ShapeError("Batch: empty batch");
  if (target_count(targets) != inputs.rows()) {
    throw ShapeError("Batch: " + std::to_string(target_count(targets)) +
                     " targets for " + std::to_string(inputs.rows()) +
                     " inputs");
  }
}

ForwardPass forward(const Mlp& model, const DenseMatrix& inputs) {
  if (inputs.cols() != model.input_dim()) {
    throw ShapeError("forward: input width " + std::to_string(inputs.cols()) +
                     " != model input_dim " +
                     std::to_string(model.input_dim()));
  }
  ForwardPass pass;
  pass.cache.fingerprint = model.fingerprint();
  DenseMatrix x = inputs;
  for (const auto& layer : model.layers()) {
    DenseMatrix z = matmul_abt(x, layer.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
    }
    pass.cache.inputs.push_back(std::move(x));
    pass.cache.pre.push_back(z);
    activate_inplace(z, layer.activation);
    x = std::move(z);
  }
  pass.output = std::move(x);
  return pass;
}

DenseMatrix predict(const Mlp& model, const DenseMatrix& inputs) {
  return forward(model, inputs).output;
}

namespace {

const ClassTargets& class_targets(const Targets& targets,
                                  const DenseMatrix& outputs) {
  const auto* t = std::get_if<ClassTargets>(&targets);
  if (!t) throw InvalidArgument("softmax_ce requires class-index targets");
  if (t->size() != outputs.rows()) {
    throw ShapeError("loss: " + std::to_string(t->size()) + " targets for " +
                     std::to_string(outputs.rows()) + " outputs");
  }
  for (std::size_t label : *t) {
    if (label >= outputs.cols()) {
      throw InvalidArgument("loss: class index " + std::to_string(label) +
                            " out of range for " +
                            std::to_string(outputs.cols()) + " classes");
    }
  }
  return *t;
}

const DenseMatrix& regression_targets(const Targets& targets,
                                      const DenseMatrix& outputs) {
  const auto* t = std::get_if<DenseMatrix>(&targets);
  if (!t) throw InvalidArgument("mse requires regression targets");
  if (t->shape() != outputs.shape()) {
    throw ShapeError("loss: targets " + to_string(t->shape()) +
                     " vs outputs " + to_string(outputs.shape()));
  }
  return *t;
}

// Row-wise softmax with max subtraction.
DenseMatrix softmax(const DenseMatrix& logits) {
  DenseMatrix p = logits;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return p;
}

}  // namespace

double loss(const DenseMatrix& outputs, const Targets& targets, LossKind kind) {
  if (outputs.rows() == 0) throw ShapeError("loss: empty batch");
  const double batch = static_cast<double>(outputs.rows());
  double total = 0.0;
  if (kind == LossKind::mse) {
    const auto& t = regression_targets(targets, outputs);
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      const double d = outputs.data()[i] - t.data()[i];
      total += d * d;
    }
    return total / batch;
  }
  const auto& labels = class_targets(targets, outputs);
  for (std::size_t r = 0; r < outputs.rows(); ++r) {
    auto row = outputs.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    total += std::log(sum) + mx - row[labels[r]];
  }
  return total / batch;
}

DenseMatrix loss_grad(const DenseMatrix& outputs, const Targets& targets,
                      LossKind kind) {
  if (outputs.rows() == 0) throw ShapeError("loss_grad: empty batch");
  const double batch = static_cast<double>(outputs.rows());
  if (kind == LossKind::mse) {
    const auto& t = regression_targets(targets, outputs);
    DenseMatrix g(outputs.rows(), outputs.cols());
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data()[i] = 2.0 * (outputs.data()[i] - t.data()[i]) / batch;
    return g;
  }
  const auto& labels = class_targets(targets, outputs);
  DenseMatrix g = softmax(outputs);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    g(r, labels[r]) -= 1.0;
    for (double& v : g.row(r)) v /= batch;
  }
  return g;
}

double accuracy(const DenseMatrix& outputs, const ClassTargets& targets) {
  if (targets.size() != outputs.rows() || targets.empty()) {
    throw ShapeError("accuracy: target count mismatch");
  }
  std::size_t hits = 0;
  for (std::size_t r = 0; r < outputs.rows(); ++r) {
    auto row = outputs.row(r);
    const auto best = static_cast<std::size_t>(
        std::max_element(row.begin(), row.end()) - row.begin());
    if (best == targets[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

GradientSet GradientSet::zeros_like(const Mlp& model) {
  GradientSet g;
  for (const auto& l : model.layers()) {
    g.weight.emplace_back(l.weight.rows(), l.weight.cols());
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

void GradientSet::add(const GradientSet& other) {
  if (other.layer_count() != layer_count()) {
    throw ShapeError("GradientSet::add: layer count mismatch");
  }
  for (std::size_t i = 0; i < weight.size(); ++i) {
    add_scaled_inplace(weight[i], other.weight[i], 1.0);
    if (bias[i].size() != other.bias[i].size())
      throw ShapeError("GradientSet::add: bias length mismatch");
    for (std::size_t j = 0; j < bias[i].size(); ++j)
      bias[i][j] += other.bias[i][j];
  }
}

void GradientSet::scale(double factor) {
  for (auto& w : weight)
    for (double& v : w.data()) v *= factor;
  for (auto& b : bias)
    for (double& v : b) v *= factor;
}

GradientSet backward(const Mlp& model, const ForwardCache& cache,
                     const Targets& targets, LossKind kind) {
  const std::size_t n = model.layer_count();
  if (cache.inputs.size() != n || cache.pre.size() != n) {
    throw StateError("backward: cache has " +
                     std::to_string(cache.inputs.size()) +
                     " layers, model has " + std::to_string(n));
  }
  if (cache.fingerprint != model.fingerprint()) {
    throw StateError("backward: stale cache, model parameters changed since "
                     "forward");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (cache.pre[i].cols() != model.layer(i).out_dim() ||
        cache.inputs[i].cols() != model.layer(i).in_dim()) {
      throw StateError("backward: cache shapes do not match layer " +
                       std::to_string(i));
    }
  }

  DenseMatrix output = cache.pre.back();
  activate_inplace(output, model.layers().back().activation);
  DenseMatrix grad = loss_grad(output, targets, kind);

  GradientSet g;
  g.weight.resize(n);
  g.bias.resize(n);
  for (std::size_t i = n; i-- > 0;) {
    const auto& layer = model.layer(i);
    activation_backward_inplace(grad, cache.pre[i], layer.activation);
    g.weight[i] = matmul_atb(grad, cache.inputs[i]);
    g.bias[i].assign(layer.out_dim(), 0.0);
    for (std::size_t r = 0; r < grad.rows(); ++r) {
      auto row = grad.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) g.bias[i][c] += row[c];
    }
    if (i > 0) grad = matmul(grad, layer.weight);
  }
  return g;
}

GradientSet finite_diff_grad(const Mlp& model, const Batch& batch,
                             LossKind kind, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad: h must be > 0");
  batch.validate();
  Mlp probe = model;
  GradientSet g = GradientSet::zeros_like(model);
  auto eval = [&] { return loss(predict(probe, batch.inputs), batch.targets, kind); };
  auto central = [&](double& param) {
    const double saved = param;
    param = saved + h;
    const double up = eval();
    param = saved - h;
    const double down = eval();
    param = saved;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t i = 0; i < probe.layer_count(); ++i) {
    auto w = probe.weight(i).data();
    for (std::size_t j = 0; j < w.size(); ++j)
      g.weight[i].data()[j] = central(w[j]);
    auto b = probe.bias(i);
    for (std::size_t j = 0; j < b.size(); ++j) g.bias[i][j] = central(b[j]);
  }
  return g;
}

}  // namespace shira

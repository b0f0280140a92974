// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "shira/linalg.hpp"

namespace shira {

enum class Activation : std::uint8_t { none = 0, relu = 1, tanh = 2 };

std::string_view to_string(Activation act);
Activation parse_activation(std::string_view name);

/// Applies the activation entrywise in place.
void activate_inplace(DenseMatrix& z, Activation act);
/// grad <- grad * act'(pre), entrywise.
void activation_backward_inplace(DenseMatrix& grad, const DenseMatrix& pre,
                                 Activation act);

struct LinearLayer {
  DenseMatrix weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::none;

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }

  bool operator==(const LinearLayer&) const = default;
};

/// Feed-forward network of linear layers. Layer shapes are fixed at
/// construction; only parameter values may be mutated afterwards.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t input_dim, std::vector<LinearLayer> layers);

  /// Kaiming-initialized network with zero biases. `widths` lists every
  /// layer's output width; the last layer uses `output_activation`.
  static Mlp random(std::size_t input_dim, std::span<const std::size_t> widths,
                    Activation hidden, Activation output_activation, Rng& rng);

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t output_dim() const noexcept;
  std::size_t layer_count() const noexcept { return layers_.size(); }
  const LinearLayer& layer(std::size_t i) const { return layers_.at(i); }
  const std::vector<LinearLayer>& layers() const noexcept { return layers_; }

  DenseMatrix& weight(std::size_t i) { return layers_.at(i).weight; }
  const DenseMatrix& weight(std::size_t i) const { return layers_.at(i).weight; }
  std::span<double> bias(std::size_t i) { return layers_.at(i).bias; }
  std::span<const double> bias(std::size_t i) const {
    return layers_.at(i).bias;
  }

  /// Total number of weights and biases.
  std::size_t parameter_count() const noexcept;
  /// FNV-1a over the raw parameter bytes; cheap change detector.
  std::uint64_t fingerprint() const noexcept;
  /// Throws ShapeError if a weight matrix was reshaped behind our back.
  void validate() const;

  bool operator==(const Mlp&) const = default;

 private:
  std::size_t input_dim_ = 0;
  std::vector<LinearLayer> layers_;
};

using ClassTargets = std::vector<std::size_t>;
using Targets = std::variant<ClassTargets, DenseMatrix>;

std::size_t target_count(const Targets& targets);

struct Batch {
  DenseMatrix inputs;  // batch x input_dim
  Targets targets;

  void validate() const;
};

enum class LossKind : std::uint8_t { mse = 0, softmax_ce = 1 };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

/// Activations saved by forward; backward consumes them.
struct ForwardCache {
  std::vector<DenseMatrix> inputs;  // input of each layer
  std::vector<DenseMatrix> pre;     // pre-activation of each layer
  std::uint64_t fingerprint = 0;
};

struct ForwardPass {
  DenseMatrix output;
  ForwardCache cache;
};

ForwardPass forward(const Mlp& model, const DenseMatrix& inputs);
/// Forward without keeping the cache.
DenseMatrix predict(const Mlp& model, const DenseMatrix& inputs);

/// Mean over the batch. MSE sums squared error over output columns.
double loss(const DenseMatrix& outputs, const Targets& targets, LossKind kind);
/// d(mean loss)/d(outputs).
DenseMatrix loss_grad(const DenseMatrix& outputs, const Targets& targets,
                      LossKind kind);

/// Fraction of rows whose argmax matches the class target.
double accuracy(const DenseMatrix& outputs, const ClassTargets& targets);

struct GradientSet {
  std::vector<DenseMatrix> weight;
  std::vector<std::vector<double>> bias;

  static GradientSet zeros_like(const Mlp& model);
  std::size_t layer_count() const noexcept { return weight.size(); }
  void add(const GradientSet& other);
  void scale(double factor);
};

GradientSet backward(const Mlp& model, const ForwardCache& cache,
                     const Targets& targets, LossKind kind);

/// Central-difference estimate of every parameter gradient.
GradientSet finite_diff_grad(const Mlp& model, const Batch& batch,
                             LossKind kind, double h);

}  // namespace shira

// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace shira {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(Shape shape);

/// Row-major matrix of doubles. Storage length is always rows * cols.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  Shape shape() const noexcept { return {rows_, cols_}; }
  bool empty() const noexcept { return data_.empty(); }

  double operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) noexcept {
    return data_[r * cols_ + c];
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> row(std::size_t r) const noexcept {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<double> row(std::size_t r) noexcept {
    return std::span<double>(data_).subspan(r * cols_, cols_);
  }

  bool all_finite() const noexcept;
  DenseMatrix transpose() const;

  /// Exact (bitwise for non-NaN values) equality of shape and contents.
  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// xoshiro256** seeded through splitmix64. The algorithm is fixed so that
/// sequences can be reproduced from the written description alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) from the top 53 bits.
  double uniform() noexcept;
  /// Uniform integer in [0, bound). bound must be nonzero.
  std::uint64_t below(std::uint64_t bound) noexcept;
  /// Standard normal via the basic Box-Muller transform; values come in
  /// pairs and the second one is cached.
  double gaussian() noexcept;

 private:
  std::array<std::uint64_t, 4> state_{};
  double cached_ = 0.0;
  bool has_cached_ = false;
};

struct Distribution {
  enum class Kind { uniform, gaussian, kaiming };
  Kind kind = Kind::uniform;
  double a = 0.0;  // uniform low bound or gaussian stddev
  double b = 1.0;  // uniform high bound

  static Distribution uniform(double lo = 0.0, double hi = 1.0) {
    return {Kind::uniform, lo, hi};
  }
  static Distribution gaussian(double stddev) {
    return {Kind::gaussian, stddev, 0.0};
  }
  /// Zero-mean gaussian with stddev sqrt(2 / cols) (cols is fan-in for an
  /// out x in weight).
  static Distribution kaiming() { return {Kind::kaiming, 0.0, 0.0}; }
};

DenseMatrix rand_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                        Distribution dist);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// a * b^T without materializing the transpose.
DenseMatrix matmul_abt(const DenseMatrix& a, const DenseMatrix& b);
/// a^T * b without materializing the transpose.
DenseMatrix matmul_atb(const DenseMatrix& a, const DenseMatrix& b);

/// w + alpha * delta. alpha == 0 returns w unchanged bit for bit.
DenseMatrix add_scaled(const DenseMatrix& w, const DenseMatrix& delta,
                       double alpha);
void add_scaled_inplace(DenseMatrix& w, const DenseMatrix& delta,
                        double alpha);

/// Rank by Gaussian elimination with full pivoting: counts pivots whose
/// magnitude exceeds tol times the first (largest) pivot.
std::size_t numerical_rank(const DenseMatrix& a, double tol = 1e-9);

double frobenius_norm(const DenseMatrix& a);
/// Largest |a - b| over all entries. Shapes must match.
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace shira

// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/linalg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <utility>

#include "shira/error.hpp"

namespace shira {

namespace {

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

__extension__ using u128 = unsigned __int128;

std::uint64_t splitmix64(std::uint64_t& x) noexcept {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::string to_string(Shape shape) {
  return std::to_string(shape.rows) + "x" + std::to_string(shape.cols);
}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols,
                         std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("DenseMatrix: data length " +
                     std::to_string(data_.size()) + " does not match " +
                     to_string(Shape{rows, cols}));
  }
}

DenseMatrix::DenseMatrix(
    std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) {
      throw ShapeError("DenseMatrix: ragged initializer");
    }
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool DenseMatrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& s : state_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = std::rotl(state_[3], 45);
  return result;
}

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t bound) noexcept {
  // Lemire's multiply-shift with rejection.
  u128 m = static_cast<u128>(next_u64()) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      m = static_cast<u128>(next_u64()) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double Rng::gaussian() noexcept {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

DenseMatrix rand_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                        Distribution dist) {
  if (rows == 0 || cols == 0) {
    throw InvalidArgument("rand_matrix: rows and cols must be >= 1");
  }
  DenseMatrix m(rows, cols);
  auto data = m.data();
  switch (dist.kind) {
    case Distribution::Kind::uniform:
      for (double& v : data) v = dist.a + (dist.b - dist.a) * rng.uniform();
      break;
    case Distribution::Kind::gaussian:
      for (double& v : data) v = dist.a * rng.gaussian();
      break;
    case Distribution::Kind::kaiming: {
      const double stddev = std::sqrt(2.0 / static_cast<double>(cols));
      for (double& v : data) v = stddev * rng.gaussian();
      break;
    }
  }
  return m;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " +
                     to_string(a.shape()) + " * " + to_string(b.shape()));
  }
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

DenseMatrix matmul_abt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_abt: column counts differ, " +
                     to_string(a.shape()) + " * " + to_string(b.shape()) +
                     "^T");
  }
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto a_row = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto b_row = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out(i, j) = acc;
    }
  }
  return out;
}

DenseMatrix matmul_atb(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_atb: row counts differ, " +
                     to_string(a.shape()) + "^T * " + to_string(b.shape()));
  }
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto a_row = a.row(k);
    auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a_row[i];
      if (aki == 0.0) continue;
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

DenseMatrix add_scaled(const DenseMatrix& w, const DenseMatrix& delta,
                       double alpha) {
  DenseMatrix out = w;
  add_scaled_inplace(out, delta, alpha);
  return out;
}

void add_scaled_inplace(DenseMatrix& w, const DenseMatrix& delta,
                        double alpha) {
  require_same_shape(w, delta, "add_scaled");
  if (alpha == 0.0) return;
  auto dst = w.data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = dst[i] + alpha * src[i];
}

std::size_t numerical_rank(const DenseMatrix& a, double tol) {
  if (!(tol > 0.0)) throw InvalidArgument("numerical_rank: tol must be > 0");
  if (a.empty()) throw InvalidArgument("numerical_rank: empty matrix");

  DenseMatrix m = a;
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  const std::size_t steps = std::min(rows, cols);
  double threshold = -1.0;
  std::size_t rank = 0;

  for (std::size_t k = 0; k < steps; ++k) {
    std::size_t pr = k, pc = k;
    double best = 0.0;
    for (std::size_t r = k; r < rows; ++r) {
      for (std::size_t c = k; c < cols; ++c) {
        const double v = std::abs(m(r, c));
        if (v > best) {
          best = v;
          pr = r;
          pc = c;
        }
      }
    }
    if (threshold < 0.0) {
      if (best == 0.0) return 0;
      threshold = tol * best;
    }
    if (best <= threshold) break;
    ++rank;

    if (pr != k) {
      auto a_row = m.row(pr);
      auto b_row = m.row(k);
      std::swap_ranges(a_row.begin(), a_row.end(), b_row.begin());
    }
    if (pc != k) {
      for (std::size_t r = 0; r < rows; ++r) std::swap(m(r, pc), m(r, k));
    }
    const double pivot = m(k, k);
    for (std::size_t r = k + 1; r < rows; ++r) {
      const double factor = m(r, k) / pivot;
      if (factor == 0.0) continue;
      for (std::size_t c = k; c < cols; ++c) m(r, c) -= factor * m(k, c);
    }
  }
  return rank;
}

double frobenius_norm(const DenseMatrix& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  return std::sqrt(acc);
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace shira

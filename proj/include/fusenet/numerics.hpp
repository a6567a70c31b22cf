#pragma once

// Dense row-major matrices, seeded randomness and a central-difference
// gradient oracle. Everything here is 64-bit.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fusenet {

/// Bad input, bad file, inconsistent shapes. The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or an objective blow-up during training (exit code 2).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ConfigError("Matrix: data length " + std::to_string(data_.size()) +
                        " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const Vector& values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Plain i-k-j triple loop with 64-bit accumulation.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ConfigError("matmul: dimension mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  if (!all_finite(c.data())) throw DivergenceError("matmul: non-finite product");
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

// splitmix64 finalizer; used to derive independent child streams.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Single-owner random stream. Do not share across threads; derive children instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  Rng child(std::uint64_t index) const { return Rng(child_seed(seed_, index)); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (stddev == 0.0) return mean;
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own index draws so the order is independent of
    // the standard library's std::shuffle implementation.
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(i)]);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

inline Matrix gaussian_fill(Rng& rng, Matrix m, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw ConfigError("gaussian_fill: negative std");
  for (double& x : m.data()) x = rng.normal(mean, stddev);
  return m;
}

/// Central differences with step h_k = h * max(1, |theta_k|).
inline Vector fd_gradient(const std::function<double(std::span<const double>)>& f,
                          std::span<const double> theta, double h = 1e-5) {
  if (!(h > 0.0)) throw ConfigError("fd_gradient: step must be positive");
  Vector x(theta.begin(), theta.end());
  Vector g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x[k];
    const double step = h * std::max(1.0, std::abs(orig));
    x[k] = orig + step;
    const double fp = f(x);
    x[k] = orig - step;
    const double fm = f(x);
    x[k] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw DivergenceError("fd_gradient: non-finite function value at coordinate " +
                            std::to_string(k));
    // Divide by the realized step; (orig+step)-(orig-step) can differ from 2*step.
    g[k] = (fp - fm) / ((orig + step) - (orig - step));
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor); the comparison used by every gradient check.
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-12) {
  const double num = std::sqrt(squared_distance(a, b));
  const double den = std::max({std::sqrt(squared_norm(a)), std::sqrt(squared_norm(b)), floor});
  return num / den;
}

}  // namespace fusenet

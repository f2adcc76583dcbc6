#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmtl/error.hpp"

namespace cmtl {

using Vector = std::vector<double>;

inline constexpr double kDefaultLogEps = 1e-8;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw Error(ErrorKind::Shape, "matrix value count " + std::to_string(values_.size()) +
                                        " != " + std::to_string(rows_) + "x" +
                                        std::to_string(cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::Shape, std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                                      std::to_string(a.cols()) + " vs " +
                                      std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::Shape, "matmul: " + std::to_string(a.rows()) + "x" +
                                      std::to_string(a.cols()) + " by " +
                                      std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

/// aᵀ·b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error(ErrorKind::Shape, "matmul_tn: row mismatch");
  Matrix out(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto src = b.row(r);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ari = a(r, i);
      if (ari == 0.0) continue;
      auto dst = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += ari * src[j];
    }
  }
  return out;
}

/// a·bᵀ without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error(ErrorKind::Shape, "matmul_nt: column mismatch");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

inline void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(ErrorKind::InvalidInput, std::string(what) + ": non-finite input");
  }
}

inline Vector softmax(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorKind::InvalidInput, "softmax: empty input");
  check_finite(v, "softmax");
  const double top = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - top);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

inline double sigmoid(double x) {
  if (!std::isfinite(x)) throw Error(ErrorKind::InvalidInput, "sigmoid: non-finite input");
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void validate_log_eps(double eps) {
  if (!(eps > 0.0 && eps <= 1e-3)) {
    throw Error(ErrorKind::Config, "log eps must lie in (0, 1e-3], got " + std::to_string(eps));
  }
}

inline double clamped_log(double x, double eps = kDefaultLogEps) {
  validate_log_eps(eps);
  return std::log(std::max(x, eps));
}

/// d/dx of clamped_log; zero on the clamped branch.
inline double clamped_log_derivative(double x, double eps = kDefaultLogEps) {
  return x > eps ? 1.0 / x : 0.0;
}

/// Deterministic generator. Built on mt19937_64, whose output sequence the
/// standard fixes; the distribution transforms are done here because the
/// standard library's distributions are implementation-defined.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw Error(ErrorKind::InvalidInput, "rng index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  /// Independent generator for a sub-stream; used to hand distinct seeds to
  /// parallel or nested consumers.
  SeededRng fork() { return SeededRng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cmtl

#pragma once

// Small dense linear algebra used across the library: a row-major matrix,
// LU with partial pivoting, and Perron power iteration for non-negative
// matrices. Sizes here are desk-scale (K up to a few dozen, K^2 for edge
// chains), so nothing is blocked or vectorised.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "metapop/error.hpp"

namespace metapop {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(const std::vector<Vector>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      if (rows[i].size() != c) throw ValidationError("ragged matrix: row " + std::to_string(i) + " has " +
                                                     std::to_string(rows[i].size()) + " entries, expected " +
                                                     std::to_string(c));
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

  std::vector<Vector> to_rows() const {
    std::vector<Vector> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i].assign(row(i).begin(), row(i).end());
    return out;
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  friend Matrix operator*(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
      for (std::size_t k = 0; k < a.cols_; ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < b.cols_; ++j) c(i, j) += aik * b(k, j);
      }
    return c;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// y = A x
inline Vector multiply(const Matrix& a, std::span<const double> x) {
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

/// y = x A (row vector times matrix)
inline Vector multiply(std::span<const double> x, const Matrix& a) {
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += xi * a(i, j);
  }
  return y;
}

inline double sum(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0); }

inline double norm_inf(std::span<const double> x) {
  double r = 0.0;
  for (double v : x) r = std::max(r, std::abs(v));
  return r;
}

inline double distance_l1(std::span<const double> a, std::span<const double> b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r += std::abs(a[i] - b[i]);
  return r;
}

inline double distance_inf(std::span<const double> a, std::span<const double> b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a[i] - b[i]));
  return r;
}

inline void normalize_sum(std::span<double> x) {
  const double s = sum(x);
  for (double& v : x) v /= s;
}

/// Solves A x = b by LU with partial pivoting. Returns nullopt when a pivot
/// falls below `pivot_tol` relative to the largest entry of A.
inline std::optional<Vector> lu_solve(Matrix a, Vector b, double pivot_tol = 1e-12) {
  const std::size_t n = a.rows();
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(a(i, j)));
  if (scale == 0.0) return n == 0 ? std::optional<Vector>(Vector{}) : std::nullopt;

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (std::abs(a(piv, k)) < pivot_tol * scale) return std::nullopt;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      a(i, k) = 0.0;
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
      b[i] -= f * b[k];
    }
  }
  Vector x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= a(ii, j) * x[j];
    x[ii] = s / a(ii, ii);
  }
  return x;
}

struct PowerOptions {
  double value_tol = 1e-12;   // relative change of the eigenvalue estimate
  double vector_tol = 1e-14;  // l1 change of the sum-normalised iterate (floored at 16 n eps)
  std::size_t max_iter = 1'000'000;
};

struct PerronPair {
  double value = 0.0;
  Vector vector;  // sum-normalised, non-negative
  std::size_t iterations = 0;
};

/// Perron root and right eigenvector of a non-negative irreducible matrix via
/// power iteration on A + cI, c = max row sum. The shift makes A primitive so
/// the iteration converges geometrically even when A is periodic.
inline PerronPair perron_right(const Matrix& a, const PowerOptions& opt = {}) {
  const std::size_t n = a.rows();
  if (n == 0) throw ValidationError("empty matrix has no Perron root");
  double shift = 0.0;
  for (std::size_t i = 0; i < n; ++i) shift = std::max(shift, sum(a.row(i)));
  if (shift == 0.0) return {0.0, Vector(n, 1.0 / static_cast<double>(n)), 0};

  Vector x(n, 1.0 / static_cast<double>(n));
  double lambda = 0.0;
  const double vector_tol =
      std::max(opt.vector_tol, 16.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon());
  for (std::size_t it = 1; it <= opt.max_iter; ++it) {
    Vector y = multiply(a, x);
    for (std::size_t i = 0; i < n; ++i) y[i] += shift * x[i];
    const double s = sum(y);  // x sums to one, so s = lambda + shift
    for (double& v : y) v /= s;
    const double next = s - shift;
    const double dv = distance_l1(x, y);
    const bool value_ok = std::abs(next - lambda) <= opt.value_tol * std::max(std::abs(next), 1e-300);
    x = std::move(y);
    lambda = next;
    if (value_ok && dv <= vector_tol) {
      // Recompute from the unshifted matrix to avoid cancellation against c.
      const Vector ax = multiply(a, x);
      return {sum(ax) / sum(x), std::move(x), it};
    }
  }
  throw ConvergenceError("Perron power iteration did not converge", std::abs(lambda));
}

inline PerronPair perron_left(const Matrix& a, const PowerOptions& opt = {}) {
  return perron_right(a.transpose(), opt);
}

/// Strongly connected components of the support graph of a square matrix
/// (edge i->j when a(i,j) != 0). Iterative Tarjan.
inline std::vector<std::vector<std::size_t>> strongly_connected_components(const Matrix& a) {
  const std::size_t n = a.rows();
  constexpr std::size_t unset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> index(n, unset), low(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::vector<std::vector<std::size_t>> comps;
  std::size_t counter = 0;

  struct Frame {
    std::size_t v;
    std::size_t next;
  };
  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != unset) continue;
    std::vector<Frame> call{{root, 0}};
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!call.empty()) {
      Frame& f = call.back();
      bool descended = false;
      while (f.next < n) {
        const std::size_t w = f.next++;
        if (a(f.v, w) == 0.0) continue;
        if (index[w] == unset) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = true;
          call.push_back({w, 0});
          descended = true;
          break;
        }
        if (on_stack[w]) low[f.v] = std::min(low[f.v], index[w]);
      }
      if (descended) continue;
      const std::size_t v = f.v;
      if (low[v] == index[v]) {
        std::vector<std::size_t> comp;
        std::size_t w = unset;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp.push_back(w);
        } while (w != v);
        std::sort(comp.begin(), comp.end());
        comps.push_back(std::move(comp));
      }
      call.pop_back();
      if (!call.empty()) low[call.back().v] = std::min(low[call.back().v], low[v]);
    }
  }
  return comps;
}

/// Spectral radius of a non-negative (possibly reducible) matrix: the maximum
/// Perron root over the irreducible diagonal blocks.
inline double spectral_radius_nonnegative(const Matrix& a, const PowerOptions& opt = {}) {
  double rho = 0.0;
  for (const auto& comp : strongly_connected_components(a)) {
    if (comp.size() == 1) {
      rho = std::max(rho, a(comp[0], comp[0]));
      continue;
    }
    Matrix block(comp.size(), comp.size());
    for (std::size_t i = 0; i < comp.size(); ++i)
      for (std::size_t j = 0; j < comp.size(); ++j) block(i, j) = a(comp[i], comp[j]);
    rho = std::max(rho, perron_right(block, opt).value);
  }
  return rho;
}

}  // namespace metapop

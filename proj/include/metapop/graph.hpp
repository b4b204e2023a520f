#pragma once

// Patch graph of a source-sink metapopulation: K patches with mean offspring
// numbers m_i and a row-stochastic dispersal matrix D.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metapop/error.hpp"
#include "metapop/linalg.hpp"

namespace metapop {

inline constexpr double kStochasticTol = 1e-12;

/// A point of the probability simplex (occupancy frequencies f, phi or u).
class OccupancyVector {
 public:
  OccupancyVector() = default;

  /// Validates non-negativity and unit sum (within 1e-12).
  explicit OccupancyVector(Vector f) : f_(std::move(f)) {
    if (f_.empty()) throw ValidationError("occupancy vector is empty");
    for (std::size_t i = 0; i < f_.size(); ++i)
      if (!(f_[i] >= 0.0)) throw ValidationError("occupancy entry " + std::to_string(i) + " is negative");
    if (std::abs(sum(f_) - 1.0) > 1e-12)
      throw ValidationError("occupancy entries sum to " + std::to_string(sum(f_)) + ", not 1");
  }

  /// Rescales a non-negative, non-zero vector onto the simplex.
  static OccupancyVector normalized(Vector f) {
    const double s = sum(f);
    if (!(s > 0.0)) throw ValidationError("cannot normalise a vector with non-positive sum");
    for (double& v : f) v /= s;
    return OccupancyVector(std::move(f));
  }

  std::size_t size() const noexcept { return f_.size(); }
  double operator[](std::size_t i) const noexcept { return f_[i]; }
  const Vector& values() const noexcept { return f_; }
  operator std::span<const double>() const noexcept { return f_; }

 private:
  Vector f_;
};

class MetapopGraph {
 public:
  MetapopGraph() = default;

  /// Rows of D within 1e-12 of unit sum are renormalised; anything further
  /// off is rejected with the offending row index.
  MetapopGraph(Vector means, Matrix dispersal, std::vector<std::string> labels = {})
      : m_(std::move(means)), d_(std::move(dispersal)), labels_(std::move(labels)) {
    const std::size_t k = m_.size();
    if (k == 0) throw ValidationError("graph must have at least one patch");
    if (d_.rows() != k || d_.cols() != k)
      throw ValidationError("D must be " + std::to_string(k) + "x" + std::to_string(k) + ", got " +
                            std::to_string(d_.rows()) + "x" + std::to_string(d_.cols()));
    if (!labels_.empty() && labels_.size() != k) throw ValidationError("labels must have one entry per patch");
    for (std::size_t i = 0; i < k; ++i) {
      if (!(m_[i] >= 0.0) || !std::isfinite(m_[i]))
        throw ValidationError("mean m[" + std::to_string(i) + "] must be finite and non-negative");
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double v = d_(i, j);
        if (!(v >= 0.0 && v <= 1.0))
          throw ValidationError("D row " + std::to_string(i) + ": entry " + std::to_string(j) + " outside [0,1]");
        s += v;
      }
      if (std::abs(s - 1.0) > kStochasticTol)
        throw ValidationError("D row " + std::to_string(i) + " sums to " + std::to_string(s) + ", not 1");
      for (double& v : d_.row(i)) v /= s;
    }
  }

  std::size_t size() const noexcept { return m_.size(); }
  const Vector& means() const noexcept { return m_; }
  double mean(std::size_t i) const noexcept { return m_[i]; }
  const Matrix& dispersal() const noexcept { return d_; }
  double d(std::size_t i, std::size_t j) const noexcept { return d_(i, j); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  bool is_source(std::size_t i) const noexcept { return m_[i] > 1.0; }

  /// Same dispersal, different means (used for environment states).
  MetapopGraph with_means(Vector means) const { return MetapopGraph(std::move(means), d_, labels_); }

 private:
  Vector m_;
  Matrix d_;
  std::vector<std::string> labels_;
};

struct AssumptionReport {
  bool irreducible = false;
  bool aperiodic = false;
  bool positive_means = false;
  std::size_t period = 0;       // of the class containing patch 0; 0 when that class has no cycle
};

namespace detail {

inline std::vector<bool> reachable(const Matrix& d, std::size_t from, bool reverse) {
  const std::size_t n = d.rows();
  std::vector<bool> seen(n, false);
  std::deque<std::size_t> queue{from};
  seen[from] = true;
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    for (std::size_t w = 0; w < n; ++w) {
      const double e = reverse ? d(w, v) : d(v, w);
      if (e > 0.0 && !seen[w]) {
        seen[w] = true;
        queue.push_back(w);
      }
    }
  }
  return seen;
}

}  // namespace detail

/// Period of the communicating class of `root`: gcd over in-class edges
/// (u,v) of level(u) + 1 - level(v), levels taken from a BFS at root.
inline std::size_t class_period(const Matrix& d, std::size_t root) {
  const std::size_t n = d.rows();
  const auto fwd = detail::reachable(d, root, false);
  const auto bwd = detail::reachable(d, root, true);
  constexpr std::size_t unset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> level(n, unset);
  level[root] = 0;
  std::deque<std::size_t> queue{root};
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    for (std::size_t w = 0; w < n; ++w)
      if (d(v, w) > 0.0 && fwd[w] && bwd[w] && level[w] == unset) {
        level[w] = level[v] + 1;
        queue.push_back(w);
      }
  }
  std::size_t g = 0;
  for (std::size_t u = 0; u < n; ++u) {
    if (level[u] == unset) continue;
    for (std::size_t v = 0; v < n; ++v) {
      if (d(u, v) <= 0.0 || level[v] == unset) continue;
      const auto diff = static_cast<long long>(level[u]) + 1 - static_cast<long long>(level[v]);
      g = std::gcd(g, static_cast<std::size_t>(diff < 0 ? -diff : diff));
    }
  }
  return g;
}

/// Irreducibility and period of a transition matrix (graph structure only).
inline AssumptionReport chain_structure(const Matrix& d) {
  AssumptionReport r;
  const auto fwd = detail::reachable(d, 0, false);
  const auto bwd = detail::reachable(d, 0, true);
  r.irreducible = std::all_of(fwd.begin(), fwd.end(), [](bool b) { return b; }) &&
                  std::all_of(bwd.begin(), bwd.end(), [](bool b) { return b; });
  r.period = class_period(d, 0);
  r.aperiodic = r.irreducible && r.period == 1;
  r.positive_means = true;
  return r;
}

inline AssumptionReport validate_graph(const MetapopGraph& g) {
  AssumptionReport r = chain_structure(g.dispersal());
  r.positive_means = std::all_of(g.means().begin(), g.means().end(), [](double m) { return m > 0.0; });
  return r;
}

struct StationaryOptions {
  double tol = 1e-12;  // l1 change between iterates
  std::size_t max_iter = 1'000'000;
};

/// Stationary law u = uD of an irreducible chain, by power iteration on the
/// lazy chain (D + I)/2, then one linear-solve polish if the residual is
/// above 1e-13.
inline OccupancyVector stationary_distribution(const Matrix& d, const StationaryOptions& opt = {}) {
  if (!chain_structure(d).irreducible)
    throw ValidationError("stationary distribution requires an irreducible dispersal matrix");
  const std::size_t n = d.rows();
  Vector u(n, 1.0 / static_cast<double>(n));
  bool converged = false;
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    Vector next = multiply(u, d);
    for (std::size_t i = 0; i < n; ++i) next[i] = 0.5 * (next[i] + u[i]);
    normalize_sum(next);
    const double change = distance_l1(next, u);
    u = std::move(next);
    if (change <= opt.tol) {
      converged = true;
      break;
    }
  }
  auto residual = [&](const Vector& x) {
    const Vector xd = multiply(x, d);
    return distance_inf(xd, x);
  };
  if (!converged || residual(u) > 1e-13) {
    // u (I - D) = 0 with the last equation replaced by sum(u) = 1.
    Matrix sys(n, n);
    Vector rhs(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t j = 0; j < n; ++j) sys(i, j) = (i == j ? 1.0 : 0.0) - d(j, i);
    for (std::size_t j = 0; j < n; ++j) sys(n - 1, j) = 1.0;
    rhs[n - 1] = 1.0;
    if (auto sol = lu_solve(sys, rhs)) {
      if (residual(*sol) < residual(u) && std::all_of(sol->begin(), sol->end(), [](double v) { return v > 0.0; })) {
        u = std::move(*sol);
        converged = true;
      }
    }
  }
  if (!converged) throw ConvergenceError("stationary distribution did not converge", residual(u));
  for (double& v : u) v = std::max(v, 0.0);
  return OccupancyVector::normalized(std::move(u));
}

inline OccupancyVector stationary_distribution(const MetapopGraph& g, const StationaryOptions& opt = {}) {
  return stationary_distribution(g.dispersal(), opt);
}

}  // namespace metapop

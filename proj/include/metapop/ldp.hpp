#pragma once

// Large-deviations route to the growth rate. For a walker with transition
// matrix D the occupancy cost is
//
//   I(f) = sup_{v >> 0} sum_i f_i log(v_i / (vD)_i),
//
// the payoff of an occupancy scheme is R(f) = sum_i f_i log m_i, and
// log rho = max_f R(f) - I(f), attained at the unique ancestral occupancy phi.
//
// Two independent maximisers are provided: entropic mirror ascent over the
// simplex with a nested evaluation of I (max_rate_gap), and the closed form
// through the twisted chains D' = D diag(m) and D'' (argmax_occupancy).
//
// Everything here works on a TiltedChain (transition matrix + per-state log
// payoff) so the edge chain of a periodic environment reuses it unchanged.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metapop/error.hpp"
#include "metapop/graph.hpp"
#include "metapop/linalg.hpp"

namespace metapop {

struct TiltedChain {
  Matrix transition;
  Vector log_weight;  // log m_i; -inf where m_i = 0

  static TiltedChain from_graph(const MetapopGraph& g) {
    Vector lw(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) lw[i] = std::log(g.mean(i));
    return {g.dispersal(), std::move(lw)};
  }
  std::size_t size() const noexcept { return log_weight.size(); }
};

struct RateOptions {
  double grad_tol = 1e-10;
  std::size_t fixed_point_iters = 100;
  double damping = 0.5;
  std::size_t max_newton = 500;
};

struct RateEvaluation {
  OccupancyVector f;
  double I_value = 0.0;  // may be +inf
  double R_value = 0.0;  // may be -inf
  Vector v_star;         // inner maximiser, scaled so its last positive entry is 1; zero off the support of f
  double residual = 0.0; // max_j |f_j / v_j - sum_i d_ji f_i / (vD)_i| over the support
  bool boundary = false; // f has a zero entry
  bool attained = true;  // false when the supremum is only approached (v runs to the boundary)
};

enum class VariationalMethod { twisted_eigen, simplex_optimize };

inline const char* to_string(VariationalMethod m) {
  return m == VariationalMethod::twisted_eigen ? "twisted-eigen" : "simplex-optimize";
}

struct VariationalResult {
  double log_rho = 0.0;
  OccupancyVector phi;
  VariationalMethod method = VariationalMethod::twisted_eigen;
  double I_value = 0.0;
  double R_value = 0.0;
  Vector v_star;
  std::size_t iterations = 0;
};

/// sum_i f_i log w_i with 0 * log 0 = 0.
inline double payoff(std::span<const double> log_weight, std::span<const double> f) {
  double r = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] == 0.0) continue;
    if (log_weight[i] == -std::numeric_limits<double>::infinity()) return log_weight[i];
    r += f[i] * log_weight[i];
  }
  return r;
}

inline double payoff(const MetapopGraph& g, const OccupancyVector& f) {
  if (f.size() != g.size()) throw ValidationError("occupancy vector length differs from patch count");
  return payoff(TiltedChain::from_graph(g).log_weight, f);
}

namespace detail {

/// Inner concave problem over x = log v restricted to the support S of f.
class InnerProblem {
 public:
  InnerProblem(const Matrix& d, std::span<const double> f) : d_(d), f_(f.begin(), f.end()) {
    for (std::size_t i = 0; i < f_.size(); ++i)
      if (f_[i] > 0.0) support_.push_back(i);
  }

  const std::vector<std::size_t>& support() const { return support_; }

  /// I(f) is finite exactly when some stationary edge flow pi_ij >= 0 on the
  /// edges d_ij > 0 has both marginals equal to f. Checked as a bipartite
  /// max-flow; otherwise the occupancy has probability zero and I = +inf.
  bool infinite_cost() const { return flow_deficit() > 1e-12; }

  double flow_deficit() const {
    const std::size_t s = support_.size(), n = 2 * s + 2, src = 2 * s, snk = 2 * s + 1;
    const double big = 2.0;
    Matrix cap(n, n, 0.0);
    for (std::size_t a = 0; a < s; ++a) {
      cap(src, a) = f_[support_[a]];
      cap(s + a, snk) = f_[support_[a]];
      for (std::size_t b = 0; b < s; ++b)
        if (d_(support_[a], support_[b]) > 0.0) cap(a, s + b) = big;
    }
    double flow = 0.0;
    std::vector<std::size_t> prev(n);
    for (;;) {
      // Shortest augmenting path (Edmonds-Karp).
      std::fill(prev.begin(), prev.end(), n);
      prev[src] = src;
      std::vector<std::size_t> queue{src};
      for (std::size_t h = 0; h < queue.size() && prev[snk] == n; ++h)
        for (std::size_t v = 0; v < n; ++v)
          if (prev[v] == n && cap(queue[h], v) > 1e-15) {
            prev[v] = queue[h];
            queue.push_back(v);
          }
      if (prev[snk] == n) break;
      double push = big;
      for (std::size_t v = snk; v != src; v = prev[v]) push = std::min(push, cap(prev[v], v));
      for (std::size_t v = snk; v != src; v = prev[v]) {
        cap(prev[v], v) -= push;
        cap(v, prev[v]) += push;
      }
      flow += push;
    }
    double total = 0.0;
    for (std::size_t i : support_) total += f_[i];
    return total - flow;
  }

  // (vD)_i for i in S using only v on S; x indexed like support_.
  Vector vd(const Vector& x) const {
    Vector out(support_.size());
    for (std::size_t a = 0; a < support_.size(); ++a) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t b = 0; b < support_.size(); ++b)
        if (d_(support_[b], support_[a]) > 0.0) mx = std::max(mx, x[b]);
      double s = 0.0;
      for (std::size_t b = 0; b < support_.size(); ++b) {
        const double dba = d_(support_[b], support_[a]);
        if (dba > 0.0) s += std::exp(x[b] - mx) * dba;
      }
      out[a] = mx + std::log(s);  // log (vD)_a
    }
    return out;
  }

  double objective(const Vector& x) const {
    const Vector lvd = vd(x);
    double r = 0.0;
    for (std::size_t a = 0; a < support_.size(); ++a) r += f_[support_[a]] * (x[a] - lvd[a]);
    return r;
  }

  // w(b, a) = v_b d_ba / (vD)_a
  Matrix weights(const Vector& x, const Vector& lvd) const {
    const std::size_t n = support_.size();
    Matrix w(n, n);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t a = 0; a < n; ++a) {
        const double dba = d_(support_[b], support_[a]);
        w(b, a) = dba > 0.0 ? std::exp(x[b] - lvd[a]) * dba : 0.0;
      }
    return w;
  }

  Vector gradient(const Matrix& w) const {
    const std::size_t n = support_.size();
    Vector g(n);
    for (std::size_t b = 0; b < n; ++b) {
      double s = 0.0;
      for (std::size_t a = 0; a < n; ++a) s += f_[support_[a]] * w(b, a);
      g[b] = f_[support_[b]] - s;
    }
    return g;
  }

  // Stationarity condition of the maximiser: f_j / v_j - sum_i d_ji f_i / (vD)_i.
  double idt_residual(const Vector& x, const Vector& lvd) const {
    const std::size_t n = support_.size();
    const double shift = x[n - 1];
    double r = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      double s = 0.0;
      for (std::size_t a = 0; a < n; ++a) {
        const double dba = d_(support_[b], support_[a]);
        if (dba > 0.0) s += dba * f_[support_[a]] * std::exp(shift - lvd[a]);
      }
      r = std::max(r, std::abs(f_[support_[b]] * std::exp(shift - x[b]) - s));
    }
    return r;
  }

  // Damped fixed-point sweep of v_j <- f_j / sum_i d_ji f_i / (vD)_i in log space.
  Vector fixed_point_step(const Vector& x, double damping) const {
    const std::size_t n = support_.size();
    const Vector lvd = vd(x);
    Vector next(n);
    for (std::size_t b = 0; b < n; ++b) {
      double s = 0.0;
      for (std::size_t a = 0; a < n; ++a) {
        const double dba = d_(support_[b], support_[a]);
        if (dba > 0.0) s += dba * f_[support_[a]] * std::exp(-lvd[a]);
      }
      next[b] = (1.0 - damping) * x[b] + damping * (std::log(f_[support_[b]]) - std::log(s));
    }
    regauge(next);
    return next;
  }

  static void regauge(Vector& x) {
    const double last = x.back();
    for (double& v : x) v -= last;
  }

  // Newton direction on the first n-1 coordinates (last one is the gauge).
  std::optional<Vector> newton_direction(const Matrix& w, const Vector& grad) const {
    const std::size_t n = support_.size();
    if (n < 2) return Vector(n, 0.0);
    Matrix h(n - 1, n - 1, 0.0);  // -Hessian, positive semidefinite
    for (std::size_t a = 0; a < n; ++a) {
      const double fa = f_[support_[a]];
      for (std::size_t b = 0; b + 1 < n; ++b) {
        const double wba = w(b, a);
        if (wba == 0.0) continue;
        h(b, b) += fa * wba;
        for (std::size_t c = 0; c + 1 < n; ++c) h(b, c) -= fa * wba * w(c, a);
      }
    }
    Vector rhs(grad.begin(), grad.end() - 1);
    auto sol = lu_solve(h, rhs, 1e-14);
    if (!sol) {
      // Singular when f lies on a face of the feasible set: the objective is
      // flat along some directions. A small ridge keeps the step finite.
      double scale = 0.0;
      for (std::size_t b = 0; b + 1 < n; ++b) scale = std::max(scale, h(b, b));
      for (std::size_t b = 0; b + 1 < n; ++b) h(b, b) += 1e-10 * std::max(scale, 1e-300);
      sol = lu_solve(std::move(h), std::move(rhs), 1e-300);
    }
    if (!sol) return std::nullopt;
    sol->push_back(0.0);
    return sol;
  }

 private:
  const Matrix& d_;
  Vector f_;
  std::vector<std::size_t> support_;
};

struct InnerResult {
  double value = 0.0;
  Vector x;  // log v on the support, gauge x.back() = 0
  double grad_norm = 0.0;
  double residual = 0.0;
  bool converged = false;
};

inline InnerResult solve_inner(const InnerProblem& p, Vector x, const RateOptions& opt) {
  const std::size_t n = p.support().size();
  if (x.size() != n) x.assign(n, 0.0);
  InnerProblem::regauge(x);
  double value = p.objective(x);

  for (std::size_t it = 0; it < opt.fixed_point_iters; ++it) {
    Vector next = p.fixed_point_step(x, opt.damping);
    const double nv = p.objective(next);
    if (!(nv >= value)) break;  // oscillating or stalled: hand over to Newton
    const bool small = nv - value < 1e-15;
    x = std::move(next);
    value = nv;
    if (small) break;
  }

  InnerResult out;
  for (std::size_t it = 0; it <= opt.max_newton; ++it) {
    const Vector lvd = p.vd(x);
    const Matrix w = p.weights(x, lvd);
    const Vector grad = p.gradient(w);
    out.grad_norm = norm_inf(grad);
    out.residual = p.idt_residual(x, lvd);
    if (out.grad_norm <= opt.grad_tol && out.residual <= opt.grad_tol) {
      out.converged = true;
      break;
    }
    if (it == opt.max_newton) break;
    const auto newton = p.newton_direction(w, grad);
    if (newton && out.grad_norm < 1e-6) {
      // Inside the quadratic-convergence region the objective change is below
      // rounding, so a line search cannot certify progress: take full steps.
      for (std::size_t i = 0; i < n; ++i) x[i] += (*newton)[i];
      InnerProblem::regauge(x);
      value = p.objective(x);
      continue;
    }
    Vector dir = newton.value_or(grad);
    double dir_dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dir_dot += dir[i] * grad[i];
    if (!(dir_dot > 0.0)) {
      dir = grad;
      dir_dot = 0.0;
      for (double gi : grad) dir_dot += gi * gi;
    }
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      Vector trial(n);
      for (std::size_t i = 0; i < n; ++i) trial[i] = x[i] + t * dir[i];
      InnerProblem::regauge(trial);
      const double tv = p.objective(trial);
      if (tv >= value + 1e-4 * t * dir_dot) {
        x = std::move(trial);
        value = tv;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  out.value = value;
  out.x = std::move(x);
  return out;
}

}  // namespace detail

/// Occupancy cost I(f) for the walker with transition matrix d. States with
/// f_i = 0 take v_i = 0, which is optimal since they only enter through the
/// denominators (vD)_j.
inline RateEvaluation rate_function(const Matrix& d, const OccupancyVector& f, const RateOptions& opt = {},
                                    const Vector& warm_start = {}) {
  if (f.size() != d.rows()) throw ValidationError("occupancy vector length differs from state count");
  if (!chain_structure(d).irreducible) throw ValidationError("rate function requires an irreducible chain");
  detail::InnerProblem p(d, f.values());
  RateEvaluation ev;
  ev.f = f;
  ev.boundary = p.support().size() < f.size();
  ev.v_star.assign(f.size(), 0.0);
  if (p.infinite_cost()) {
    ev.I_value = std::numeric_limits<double>::infinity();
    ev.attained = false;
    return ev;
  }
  const auto inner = detail::solve_inner(p, warm_start, opt);
  if (!inner.converged) {
    if (!ev.boundary)
      throw ConvergenceError("inner maximisation of the rate function did not converge", inner.grad_norm);
    ev.attained = false;
  }
  ev.I_value = std::max(inner.value, 0.0);
  ev.residual = inner.residual;
  for (std::size_t a = 0; a < p.support().size(); ++a) ev.v_star[p.support()[a]] = std::exp(inner.x[a]);
  return ev;
}

inline RateEvaluation rate_function(const MetapopGraph& g, const OccupancyVector& f, const RateOptions& opt = {}) {
  RateEvaluation ev = rate_function(g.dispersal(), f, opt);
  ev.R_value = payoff(g, f);
  return ev;
}

namespace detail {

inline void require_ldp_assumptions(const TiltedChain& c) {
  const AssumptionReport s = chain_structure(c.transition);
  if (!s.irreducible) throw ValidationError("chain is reducible");
  if (!s.aperiodic)
    throw ValidationError("chain has period " + std::to_string(s.period) +
                          "; occupancy results need an aperiodic chain");
  for (std::size_t i = 0; i < c.size(); ++i)
    if (!std::isfinite(c.log_weight[i]))
      throw ValidationError("mean of state " + std::to_string(i) + " must be positive");
}

}  // namespace detail

namespace detail {

/// Implicit equalities of the set of feasible occupancies {f : some stationary
/// edge flow on d_ij > 0 has marginal f}. A forced step (state 0 always moves
/// to 2, and 2 is only entered from 0) pins f_0 = f_2, for example.
/// w . f = 0 on the whole set iff w_i = psi(class of i) - psi(class of the
/// successors of i), where the successors of each state share one class.
/// Rows of q are an orthonormal basis of those w.
class Face {
 public:
  explicit Face(const Matrix& d) {
    const std::size_t k = d.rows();
    std::vector<std::size_t> parent(k);
    for (std::size_t i = 0; i < k; ++i) parent[i] = i;
    auto find = [&](std::size_t i) {
      while (parent[i] != i) i = parent[i] = parent[parent[i]];
      return i;
    };
    std::vector<std::size_t> succ(k, k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        if (d(i, j) <= 0.0) continue;
        if (succ[i] == k)
          succ[i] = j;
        else
          parent[find(j)] = find(succ[i]);
      }
    for (std::size_t c = 0; c < k; ++c) {
      if (find(c) != c) continue;
      Vector w(k, 0.0);
      for (std::size_t i = 0; i < k; ++i) w[i] = (find(i) == c ? 1.0 : 0.0) - (find(succ[i]) == c ? 1.0 : 0.0);
      for (const Vector& q : q_) {
        double dot = 0.0;
        for (std::size_t i = 0; i < k; ++i) dot += q[i] * w[i];
        for (std::size_t i = 0; i < k; ++i) w[i] -= dot * q[i];
      }
      double nrm = 0.0;
      for (double x : w) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm < 1e-10) continue;
      for (double& x : w) x /= nrm;
      q_.push_back(std::move(w));
    }
  }

  bool empty() const { return q_.empty(); }

  /// g - Q^T lambda with Q diag(f) (g - Q^T lambda) = 0: the part of g an
  /// entropic step can follow without leaving the face.
  Vector project(const Vector& g, const Vector& f) const {
    if (q_.empty()) return g;
    Vector rhs(q_.size());
    for (std::size_t a = 0; a < q_.size(); ++a)
      for (std::size_t i = 0; i < g.size(); ++i) rhs[a] += q_[a][i] * f[i] * g[i];
    const auto lam = lu_solve(gram(f), std::move(rhs), 1e-300);
    Vector out = g;
    if (lam)
      for (std::size_t a = 0; a < q_.size(); ++a)
        for (std::size_t i = 0; i < g.size(); ++i) out[i] -= (*lam)[a] * q_[a][i];
    return out;
  }

  /// Nearest point of the face in the diag(f)^-1 metric.
  Vector snap(Vector f) const {
    if (q_.empty()) return f;
    Vector rhs(q_.size());
    for (std::size_t a = 0; a < q_.size(); ++a)
      for (std::size_t i = 0; i < f.size(); ++i) rhs[a] += q_[a][i] * f[i];
    const auto mu = lu_solve(gram(f), std::move(rhs), 1e-300);
    if (!mu) return f;
    Vector out = f;
    for (std::size_t a = 0; a < q_.size(); ++a)
      for (std::size_t i = 0; i < f.size(); ++i) out[i] -= f[i] * (*mu)[a] * q_[a][i];
    return out;
  }

  /// Orthonormal basis of {t : Q t = 0}.
  std::vector<Vector> tangent_basis(std::size_t k) const {
    std::vector<Vector> basis;
    for (std::size_t j = 0; j < k; ++j) {
      Vector t(k, 0.0);
      t[j] = 1.0;
      for (const std::vector<Vector>* set : {&q_, &std::as_const(basis)})
        for (const Vector& q : *set) {
          double dot = 0.0;
          for (std::size_t i = 0; i < k; ++i) dot += q[i] * t[i];
          for (std::size_t i = 0; i < k; ++i) t[i] -= dot * q[i];
        }
      double nrm = 0.0;
      for (double x : t) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm < 1e-8) continue;
      for (double& x : t) x /= nrm;
      basis.push_back(std::move(t));
    }
    return basis;
  }

 private:
  Matrix gram(const Vector& f) const {
    Matrix m(q_.size(), q_.size(), 0.0);
    for (std::size_t a = 0; a < q_.size(); ++a)
      for (std::size_t b = 0; b < q_.size(); ++b)
        for (std::size_t i = 0; i < f.size(); ++i) m(a, b) += q_[a][i] * f[i] * q_[b][i];
    return m;
  }

  std::vector<Vector> q_;
};

inline double spread(const Vector& g) {
  return *std::max_element(g.begin(), g.end()) - *std::min_element(g.begin(), g.end());
}

}  // namespace detail

struct SimplexOptions {
  double step = 0.1;
  double max_step = 1.0;
  std::size_t max_iter = 10'000;
  double spread_tol = 1e-11;  // max_i g_i - min_i g_i of the ascent direction
  std::size_t max_restarts = 3;
  double stall_tol = 1e-7;  // accepted spread once ascent stalls at rounding level
  RateOptions inner{.grad_tol = 1e-13};
};

/// max_f R(f) - I(f) by entropic mirror ascent, started at the stationary law.
/// The ascent direction is g_i = log m_i - log(v_i / (vD)_i) (the envelope
/// gradient); at the optimum all g_i coincide with log rho. When D forces
/// equalities between occupancies the ascent runs on that face, with g
/// projected onto it.
inline VariationalResult max_rate_gap(const TiltedChain& c, const SimplexOptions& opt = {}) {
  detail::require_ldp_assumptions(c);
  const std::size_t k = c.size();
  const detail::Face face(c.transition);
  const Vector start = face.snap(stationary_distribution(c.transition).values());

  struct Point {
    Vector f;
    detail::InnerResult inner;
    double objective;
  };
  auto try_evaluate = [&](Vector f, const Vector& warm) -> std::optional<Point> {
    detail::InnerProblem p(c.transition, f);
    if (p.infinite_cost()) return std::nullopt;  // zero-probability occupancy, never an ascent step
    auto inner = detail::solve_inner(p, warm, opt.inner);
    if (!inner.converged) inner = detail::solve_inner(p, {}, opt.inner);
    if (!inner.converged) return std::nullopt;
    const double obj = payoff(c.log_weight, f) - inner.value;
    return Point{std::move(f), std::move(inner), obj};
  };
  auto direction = [&](const Point& pt) {
    detail::InnerProblem p(c.transition, pt.f);
    const Vector lvd = p.vd(pt.inner.x);
    Vector g(k);
    for (std::size_t i = 0; i < k; ++i) g[i] = c.log_weight[i] + lvd[i] - pt.inner.x[i];
    return face.project(g, pt.f);
  };
  // Snap to the face, then renormalise (the face constraints are homogeneous).
  auto place = [&](Vector f) {
    f = face.snap(std::move(f));
    normalize_sum(f);
    return f;
  };
  auto result = [&](const Point& cur, std::size_t iterations) {
    VariationalResult r;
    r.method = VariationalMethod::simplex_optimize;
    r.phi = OccupancyVector::normalized(cur.f);
    r.R_value = payoff(c.log_weight, cur.f);
    r.I_value = cur.inner.value;
    r.log_rho = r.R_value - r.I_value;
    r.v_star.resize(k);
    for (std::size_t i = 0; i < k; ++i) r.v_star[i] = std::exp(cur.inner.x[i]);
    r.iterations = iterations;
    return r;
  };

  std::size_t total_iter = 0;
  double step = opt.step;
  for (std::size_t restart = 0; restart <= opt.max_restarts; ++restart) {
    auto first = try_evaluate(start, {});
    if (!first) throw ConvergenceError("inner rate-function solve failed at the stationary law", 0.0);
    Point cur = std::move(*first);
    bool boundary_hit = false;
    for (std::size_t it = 0; it < opt.max_iter; ++it, ++total_iter) {
      const Vector g = direction(cur);
      const double gmax = *std::max_element(g.begin(), g.end());
      const double s0 = detail::spread(g);
      if (s0 <= opt.spread_tol) return result(cur, total_iter);
      bool accepted = false;
      for (int tries = 0; tries < 60; ++tries) {
        Vector f(k);
        for (std::size_t i = 0; i < k; ++i) f[i] = cur.f[i] * std::exp(step * (g[i] - gmax));
        normalize_sum(f);
        f = place(std::move(f));
        if (*std::min_element(f.begin(), f.end()) < 1e-14) {
          boundary_hit = true;
          break;
        }
        auto next = try_evaluate(std::move(f), cur.inner.x);
        if (!next) {
          step *= 0.5;
          continue;
        }
        // Near the optimum objective changes drop below rounding; there the
        // spread of the ascent direction decides.
        bool better = next->objective > cur.objective;
        if (!better && next->objective >= cur.objective - 1e-13 * (1.0 + std::abs(cur.objective)))
          better = detail::spread(direction(*next)) < s0;
        if (better) {
          cur = std::move(*next);
          step = std::min(step * 1.25, opt.max_step);
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (boundary_hit) break;
      if (!accepted) break;  // no ascent possible at this precision
    }
    if (!boundary_hit) {
      // Mirror ascent crawls when I is much steeper in some directions than
      // others. Finish with Gauss-Newton on g(f) = const along the face, the
      // Jacobian by central differences (g is homogeneous of degree 0 in f).
      const std::vector<Vector> basis = face.tangent_basis(k);
      const std::size_t nb = basis.size();
      for (int polish = 0; polish < 20; ++polish) {
        const Vector g0 = direction(cur);
        const double s0 = detail::spread(g0);
        if (s0 <= opt.spread_tol) break;
        const double h = 1e-6 * *std::min_element(cur.f.begin(), cur.f.end());
        // Columns: derivative along each basis vector, then -1 for the constant.
        Matrix a(k, nb + 1, 0.0);
        bool ok = true;
        for (std::size_t j = 0; j < nb && ok; ++j) {
          Vector fp = cur.f, fm = cur.f;
          for (std::size_t i = 0; i < k; ++i) {
            fp[i] += h * basis[j][i];
            fm[i] -= h * basis[j][i];
          }
          auto pp = try_evaluate(face.snap(std::move(fp)), cur.inner.x);
          auto pm = try_evaluate(face.snap(std::move(fm)), cur.inner.x);
          if (!pp || !pm) {
            ok = false;
            break;
          }
          const Vector gp = direction(*pp), gm = direction(*pm);
          for (std::size_t i = 0; i < k; ++i) a(i, j) = (gp[i] - gm[i]) / (2.0 * h);
        }
        if (!ok) break;
        for (std::size_t i = 0; i < k; ++i) a(i, nb) = -1.0;
        // Normal equations with a tiny ridge: the radial direction is null.
        Matrix ata(nb + 1, nb + 1, 0.0);
        Vector atb(nb + 1, 0.0);
        for (std::size_t p = 0; p <= nb; ++p) {
          for (std::size_t q = 0; q <= nb; ++q)
            for (std::size_t i = 0; i < k; ++i) ata(p, q) += a(i, p) * a(i, q);
          for (std::size_t i = 0; i < k; ++i) atb[p] -= a(i, p) * g0[i];
        }
        double scale = 0.0;
        for (std::size_t p = 0; p <= nb; ++p) scale = std::max(scale, ata(p, p));
        for (std::size_t p = 0; p <= nb; ++p) ata(p, p) += 1e-14 * scale;
        const auto sol = lu_solve(std::move(ata), std::move(atb), 1e-300);
        if (!sol) break;
        bool improved = false;
        for (double t = 1.0; t > 1e-3 && !improved; t *= 0.5) {
          Vector f = cur.f;
          for (std::size_t j = 0; j < nb; ++j)
            for (std::size_t i = 0; i < k; ++i) f[i] += t * (*sol)[j] * basis[j][i];
          if (*std::min_element(f.begin(), f.end()) <= 0.0) continue;
          auto next = try_evaluate(place(std::move(f)), cur.inner.x);
          if (next && detail::spread(direction(*next)) < s0) {
            cur = std::move(*next);
            improved = true;
          }
        }
        if (!improved) break;
      }
      // Converged to machine precision without meeting spread_tol, or ran out
      // of iterations. Off any face g_i = log((vB)_i / v_i) with B = D diag(m),
      // so by Collatz-Wielandt min g <= log rho <= max g for every positive v
      // and the spread bounds the error whatever the inner accuracy.
      const double s = detail::spread(direction(cur));
      if (s <= opt.stall_tol) return result(cur, total_iter);
      throw ConvergenceError("mirror ascent on the simplex did not converge", s);
    }
    step = opt.step * std::pow(0.5, static_cast<double>(restart + 1));
  }
  throw ConvergenceError("mirror ascent kept approaching the simplex boundary", 0.0);
}

inline VariationalResult max_rate_gap(const MetapopGraph& g, const SimplexOptions& opt = {}) {
  return max_rate_gap(TiltedChain::from_graph(g), opt);
}

/// Closed-form maximiser via twisted chains: u is the left Perron vector of
/// D' = D diag(m), D''_ji = u_j d_ji / (uD)_i is column-stochastic and phi is
/// its Perron fixed point. u is also the inner maximiser for phi, so
/// I(phi) = sum phi_i log(u_i / (uD)_i).
inline VariationalResult argmax_occupancy(const TiltedChain& c, const PowerOptions& popt = {}) {
  detail::require_ldp_assumptions(c);
  const std::size_t k = c.size();
  const Matrix& d = c.transition;
  Matrix dprime(k, k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < k; ++i) dprime(j, i) = d(j, i) * std::exp(c.log_weight[i]);
  Vector u = perron_left(dprime, popt).vector;
  const Vector ud = multiply(u, d);
  Matrix dsecond(k, k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < k; ++i) dsecond(j, i) = u[j] * d(j, i) / ud[i];
  Vector phi = perron_right(dsecond, popt).vector;
  normalize_sum(phi);

  VariationalResult r;
  r.method = VariationalMethod::twisted_eigen;
  r.R_value = payoff(c.log_weight, phi);
  double cost = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    if (phi[i] > 0.0) cost += phi[i] * (std::log(u[i]) - std::log(ud[i]));
  r.I_value = cost;
  r.log_rho = r.R_value - r.I_value;
  r.v_star = u;
  for (double& v : r.v_star) v /= u.back();
  r.phi = OccupancyVector::normalized(std::move(phi));
  return r;
}

inline VariationalResult argmax_occupancy(const MetapopGraph& g, const PowerOptions& popt = {}) {
  return argmax_occupancy(TiltedChain::from_graph(g), popt);
}

// Fully mixing dispersal (every row of D equal to delta) has closed forms.

inline std::optional<Vector> fully_mixing_profile(const Matrix& d, double tol = 1e-15) {
  for (std::size_t i = 1; i < d.rows(); ++i)
    for (std::size_t j = 0; j < d.cols(); ++j)
      if (std::abs(d(i, j) - d(0, j)) > tol) return std::nullopt;
  return Vector(d.row(0).begin(), d.row(0).end());
}

/// rho = sum_j delta_j m_j
inline double fully_mixing_growth(std::span<const double> delta, std::span<const double> m) {
  double r = 0.0;
  for (std::size_t j = 0; j < delta.size(); ++j) r += delta[j] * m[j];
  return r;
}

/// I(f) = KL(f || delta)
inline double fully_mixing_rate(std::span<const double> delta, std::span<const double> f) {
  double r = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) {
    if (f[j] == 0.0) continue;
    if (delta[j] == 0.0) return std::numeric_limits<double>::infinity();
    r += f[j] * std::log(f[j] / delta[j]);
  }
  return r;
}

/// phi_j = delta_j m_j / sum_i delta_i m_i
inline Vector fully_mixing_occupancy(std::span<const double> delta, std::span<const double> m) {
  Vector phi(delta.size());
  const double rho = fully_mixing_growth(delta, m);
  for (std::size_t j = 0; j < phi.size(); ++j) phi[j] = delta[j] * m[j] / rho;
  return phi;
}

struct GridPoint {
  double f1, R, I, R_minus_I;
};

/// Variational landscape along the 2-patch simplex, f1 on a uniform grid of
/// interior points.
inline std::vector<GridPoint> landscape_grid(const MetapopGraph& g, std::size_t points = 99) {
  if (g.size() != 2) throw ValidationError("landscape grid is defined for K = 2 only");
  std::vector<GridPoint> out;
  Vector warm;
  for (std::size_t k = 1; k <= points; ++k) {
    const double f1 = static_cast<double>(k) / static_cast<double>(points + 1);
    const OccupancyVector f(Vector{f1, 1.0 - f1});
    const RateEvaluation ev = rate_function(g, f);
    out.push_back({f1, ev.R_value, ev.I_value, ev.R_value - ev.I_value});
  }
  return out;
}

}  // namespace metapop

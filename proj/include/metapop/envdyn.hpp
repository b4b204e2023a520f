#pragma once

// Time-varying habitat quality. The environment w_n acts on every patch at
// once, so generation n has mean matrix A(w_n) = diag(m(w_n)) D. Periodic
// schedules reduce to a product matrix; Markovian ones to a Lyapunov exponent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "metapop/disperser.hpp"
#include "metapop/error.hpp"
#include "metapop/graph.hpp"
#include "metapop/ldp.hpp"
#include "metapop/linalg.hpp"
#include "metapop/parallel.hpp"
#include "metapop/rng.hpp"
#include "metapop/spectral.hpp"

namespace metapop {

struct PeriodicSchedule {
  std::vector<std::size_t> order;  // state index used at step n mod order.size()
};

struct MarkovSchedule {
  Matrix transition;  // over environment states

  /// Two states with alpha = P(e1 -> e2), beta = P(e2 -> e1).
  static MarkovSchedule two_state(double alpha, double beta) {
    return {Matrix::from_rows({{1.0 - alpha, alpha}, {beta, 1.0 - beta}})};
  }
};

class EnvironmentModel {
 public:
  using Schedule = std::variant<PeriodicSchedule, MarkovSchedule>;

  EnvironmentModel(std::vector<std::string> states, std::vector<Vector> means, Schedule schedule)
      : states_(std::move(states)), means_(std::move(means)), schedule_(std::move(schedule)) {
    if (states_.empty()) throw ValidationError("environment needs at least one state");
    if (means_.size() != states_.size()) throw ValidationError("environment needs one mean vector per state");
    for (std::size_t w = 0; w < means_.size(); ++w) {
      if (means_[w].size() != means_[0].size())
        throw ValidationError("environment state " + states_[w] + " has a mean vector of different length");
      for (double m : means_[w])
        if (!(m >= 0.0) || !std::isfinite(m))
          throw ValidationError("environment state " + states_[w] + " has a negative or non-finite mean");
    }
    if (const auto* p = std::get_if<PeriodicSchedule>(&schedule_)) {
      if (p->order.empty()) throw ValidationError("periodic schedule is empty");
      for (std::size_t s : p->order)
        if (s >= states_.size()) throw ValidationError("periodic schedule refers to an unknown state");
    } else {
      const Matrix& t = std::get<MarkovSchedule>(schedule_).transition;
      if (t.rows() != states_.size() || t.cols() != states_.size())
        throw ValidationError("Markov environment matrix must be square over the states");
      for (std::size_t i = 0; i < t.rows(); ++i) {
        for (double v : t.row(i))
          if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("Markov environment entry outside [0,1]");
        if (std::abs(sum(t.row(i)) - 1.0) > kStochasticTol)
          throw ValidationError("Markov environment row " + std::to_string(i) + " does not sum to 1");
      }
    }
  }

  /// One state repeated forever.
  static EnvironmentModel constant(Vector means) {
    return EnvironmentModel({"e1"}, {std::move(means)}, PeriodicSchedule{{0}});
  }

  std::size_t num_states() const noexcept { return states_.size(); }
  std::size_t num_patches() const noexcept { return means_[0].size(); }
  const std::vector<std::string>& states() const noexcept { return states_; }
  const Vector& means(std::size_t w) const noexcept { return means_[w]; }
  const Schedule& schedule() const noexcept { return schedule_; }
  bool is_periodic() const noexcept { return std::holds_alternative<PeriodicSchedule>(schedule_); }
  const PeriodicSchedule& periodic() const { return std::get<PeriodicSchedule>(schedule_); }
  const MarkovSchedule& markov() const { return std::get<MarkovSchedule>(schedule_); }

 private:
  std::vector<std::string> states_;
  std::vector<Vector> means_;
  Schedule schedule_;
};

namespace detail {

inline void require_matching(const MetapopGraph& g, const EnvironmentModel& env) {
  if (env.num_patches() != g.size())
    throw ValidationError("environment means have " + std::to_string(env.num_patches()) + " patches, graph has " +
                          std::to_string(g.size()));
}

inline Matrix env_mean_matrix(const MetapopGraph& g, const Vector& m) { return mean_matrix(g.with_means(m)).a; }

/// The order as a length-2 cycle (a constant environment counts as e, e).
inline std::pair<std::size_t, std::size_t> two_phase(const EnvironmentModel& env) {
  if (!env.is_periodic()) throw ValidationError("a periodic schedule is required");
  const auto& o = env.periodic().order;
  if (o.size() == 1) return {o[0], o[0]};
  if (o.size() == 2) return {o[0], o[1]};
  throw ValidationError("this operation is defined for periodic schedules of length 2");
}

}  // namespace detail

/// Ordered product A(w_0) A(w_1) ... over one period. For period 2 this is
/// a_ij = sum_k m_i(e1) d_ik m_k(e2) d_kj.
inline MeanMatrix periodic_mean_matrix(const MetapopGraph& g, const EnvironmentModel& env) {
  detail::require_matching(g, env);
  if (!env.is_periodic()) throw ValidationError("periodic_mean_matrix needs a periodic schedule");
  const auto& order = env.periodic().order;
  Matrix a = detail::env_mean_matrix(g, env.means(order[0]));
  for (std::size_t s = 1; s < order.size(); ++s) a = a * detail::env_mean_matrix(g, env.means(order[s]));
  return {std::move(a)};
}

/// Per-step growth rate rho(product)^(1/period).
inline double periodic_growth_rate(const MetapopGraph& g, const EnvironmentModel& env) {
  const double r = growth_rate(periodic_mean_matrix(g, env)).rho;
  return std::pow(r, 1.0 / static_cast<double>(env.periodic().order.size()));
}

struct PeriodicCriterionSides {
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Two-patch, two-state alternating environment. M1, M2: patch 0 in e1, e2;
/// m1, m2: patch 1 in e1, e2; p = d_01, q = d_10. Persistence iff
/// trace(A(e1)A(e2)) > min(2, 1 + det(A(e1)A(e2))).
inline PeriodicCriterionSides two_patch_periodic_sides(double M1, double M2, double m1, double m2, double p,
                                                       double q) {
  const double lhs = M1 * M2 * (1.0 - p) * (1.0 - p) + (M1 * m2 + m1 * M2) * p * q + m1 * m2 * (1.0 - q) * (1.0 - q);
  const double r = 1.0 - p - q;
  return {lhs, std::min(2.0, 1.0 + M1 * M2 * m1 * m2 * r * r)};
}

/// R_value is lhs / rhs, so persists <=> R_value > 1.
inline PersistenceVerdict two_patch_periodic_criterion(double M1, double M2, double m1, double m2, double p,
                                                       double q) {
  for (double v : {M1, M2, m1, m2})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("means must be finite and non-negative");
  for (double v : {p, q})
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("p and q must lie in [0,1]");
  const auto s = two_patch_periodic_sides(M1, M2, m1, m2, p, q);
  return PersistenceVerdict::from_value(s.lhs / s.rhs, VerdictMethod::closed_form);
}

struct PhasedVerdicts {
  PersistenceVerdict first;   // schedule starts with its first state (e1 e2 ...)
  PersistenceVerdict second;  // schedule starts with the other state (e2 e1 ...)
};

namespace detail {

// Walk on (patch, parity) with weights m_j(w_parity); the first visit to
// (home, even) ends the excursion.
inline MetapopGraph parity_lift(const MetapopGraph& g, const Vector& even_means, const Vector& odd_means) {
  const std::size_t k = g.size();
  Matrix d(2 * k, 2 * k, 0.0);
  Vector m(2 * k);
  for (std::size_t j = 0; j < k; ++j) {
    m[j] = even_means[j];
    m[k + j] = odd_means[j];
    for (std::size_t l = 0; l < k; ++l) {
      d(j, k + l) = g.d(j, l);
      d(k + j, l) = g.d(j, l);
    }
  }
  return MetapopGraph(std::move(m), std::move(d));
}

inline PersistenceVerdict even_return_exact(const MetapopGraph& g, const Vector& even, const Vector& odd,
                                            std::size_t home) {
  const MetapopGraph lifted = parity_lift(g, even, odd);
  const auto y = first_return_matrix(lifted.dispersal(), lifted.means(), {home});
  return PersistenceVerdict::from_value(y ? (*y)(0, 0) : std::numeric_limits<double>::infinity(),
                                        VerdictMethod::exact_linear_system);
}

inline PersistenceVerdict even_return_mc(const MetapopGraph& g, const Vector& even, const Vector& odd,
                                         std::size_t home, const WalkConfig& cfg) {
  if (cfg.n_trials == 0 || cfg.max_steps == 0) throw ValidationError("n_trials and max_steps must be >= 1");
  const auto cdf = cumulative_rows(g.dispersal());
  Vector log_even(g.size()), log_odd(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    log_even[i] = std::log(even[i]);
    log_odd[i] = std::log(odd[i]);
  }
  std::vector<double> values(cfg.n_trials);
  std::vector<char> truncated(cfg.n_trials, 0);
  parallel_for(cfg.n_trials, cfg.threads, [&](std::size_t t) {
    Stream rng(cfg.seed, t);
    double log_prod = log_even[home];
    std::size_t x = home;
    for (std::uint64_t n = 1;; ++n) {
      x = rng.categorical(cdf[x]);
      const bool even_step = n % 2 == 0;
      if (even_step && x == home) break;
      log_prod += even_step ? log_even[x] : log_odd[x];
      if (n >= cfg.max_steps) {
        truncated[t] = 1;
        break;
      }
    }
    values[t] = std::exp(log_prod);
  });
  const double n = static_cast<double>(values.size());
  double mean = 0.0, cut = 0.0;
  for (std::size_t t = 0; t < values.size(); ++t) {
    mean += values[t];
    cut += truncated[t];
  }
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var = values.size() > 1 ? var / (n - 1.0) : 0.0;
  PersistenceVerdict v = PersistenceVerdict::from_value(mean, VerdictMethod::monte_carlo);
  v.ci_halfwidth = 1.959963984540054 * std::sqrt(var / n);
  v.truncated_mass = cut / n;
  return v;
}

}  // namespace detail

/// m_home(w_0) E[prod_{n=1}^{T-1} m_{X_n}(w_n)], T the first even return time
/// to home, for both starting phases of a 2-periodic environment.
inline PhasedVerdicts even_return_functional(const MetapopGraph& g, const EnvironmentModel& env, std::size_t home) {
  detail::require_matching(g, env);
  require_patch(g, home);
  require_irreducible(g);
  const auto [a, b] = detail::two_phase(env);
  return {detail::even_return_exact(g, env.means(a), env.means(b), home),
          detail::even_return_exact(g, env.means(b), env.means(a), home)};
}

inline PhasedVerdicts even_return_functional_mc(const MetapopGraph& g, const EnvironmentModel& env,
                                                std::size_t home, const WalkConfig& cfg) {
  detail::require_matching(g, env);
  require_patch(g, home);
  require_irreducible(g);
  const auto [a, b] = detail::two_phase(env);
  return {detail::even_return_mc(g, env.means(a), env.means(b), home, cfg),
          detail::even_return_mc(g, env.means(b), env.means(a), home, cfg)};
}

/// Chain of consecutive pairs (X_{2n}, X_{2n+1}) restricted to the edges
/// E = {(i,j) : d_ij > 0}; B_{(i,j)(k,l)} = d_jk d_kl.
struct EdgeChain {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  Matrix B;

  static EdgeChain from_dispersal(const Matrix& d) {
    EdgeChain c;
    for (std::size_t i = 0; i < d.rows(); ++i)
      for (std::size_t j = 0; j < d.cols(); ++j)
        if (d(i, j) > 0.0) c.edges.emplace_back(i, j);
    const std::size_t n = c.edges.size();
    c.B = Matrix(n, n, 0.0);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        const auto [k, l] = c.edges[b];
        c.B(a, b) = d(c.edges[a].second, k) * d(k, l);
      }
    for (std::size_t a = 0; a < n; ++a) {
      const double s = sum(c.B.row(a));
      for (double& v : c.B.row(a)) v /= s;
    }
    return c;
  }
};

struct PeriodicGrowth {
  double two_log_rho = 0.0;      // max over edge occupancies of R - I
  double log_rho_product = 0.0;  // log rho(A(e1) A(e2)) by the Perron route
  VariationalResult edge;        // phi over EdgeChain::edges
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  Vector first_marginal;   // sum_j phi_(i,j), indexed by i
  Vector second_marginal;  // sum_i phi_(i,j), indexed by j
};

/// Edge-chain variational formula 2 log rho = max_f R(f) - I(f) with
/// R(f) = sum_E f_E log(m_{E1}(e1) m_{E2}(e2)). B must itself be
/// irreducible and aperiodic.
inline PeriodicGrowth periodic_growth_and_occupancy(const MetapopGraph& g, const EnvironmentModel& env,
                                                    VariationalMethod method = VariationalMethod::twisted_eigen) {
  detail::require_matching(g, env);
  const auto [a, b] = detail::two_phase(env);
  EdgeChain ec = EdgeChain::from_dispersal(g.dispersal());
  const AssumptionReport s = chain_structure(ec.B);
  if (!s.irreducible) throw ValidationError("edge chain is reducible");
  if (!s.aperiodic) throw ValidationError("edge chain has period " + std::to_string(s.period) + "; it must be aperiodic");

  TiltedChain tc{ec.B, Vector(ec.edges.size())};
  for (std::size_t e = 0; e < ec.edges.size(); ++e)
    tc.log_weight[e] = std::log(env.means(a)[ec.edges[e].first] * env.means(b)[ec.edges[e].second]);

  PeriodicGrowth out;
  out.edge = method == VariationalMethod::twisted_eigen ? argmax_occupancy(tc) : max_rate_gap(tc);
  out.two_log_rho = out.edge.log_rho;
  out.log_rho_product = std::log(growth_rate(periodic_mean_matrix(g, env)).rho);
  out.first_marginal.assign(g.size(), 0.0);
  out.second_marginal.assign(g.size(), 0.0);
  for (std::size_t e = 0; e < ec.edges.size(); ++e) {
    out.first_marginal[ec.edges[e].first] += out.edge.phi[e];
    out.second_marginal[ec.edges[e].second] += out.edge.phi[e];
  }
  out.edges = std::move(ec.edges);
  return out;
}

/// Fully mixing dispersal in a 2-periodic environment:
/// rho = sqrt(sum_i delta_i m_i(e1) * sum_i delta_i m_i(e2)).
inline double fully_mixing_periodic_growth(std::span<const double> delta, std::span<const double> m1,
                                           std::span<const double> m2) {
  return std::sqrt(fully_mixing_growth(delta, m1) * fully_mixing_growth(delta, m2));
}

struct LyapunovConfig {
  std::uint64_t n_steps = 1'000'000;  // split evenly across batches
  std::uint64_t burn_in = 1'000;      // per batch
  std::size_t batches = 20;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct LyapunovEstimate {
  double gamma = 0.0;
  double ci_halfwidth = 0.0;
  std::uint64_t n_steps = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// 0.975 quantile of Student's t for small degrees of freedom; normal beyond.
inline double t_quantile_975(std::size_t dof) {
  static constexpr double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                     2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                                     2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (dof == 0) return std::numeric_limits<double>::infinity();
  if (dof <= 30) return table[dof - 1];
  return 1.959963984540054;
}

}  // namespace detail

/// gamma = lim (1/n) log ||A(w_0) ... A(w_{n-1})||. Each batch runs its own
/// stationary environment chain and row vector (stream (seed, batch)),
/// discards burn_in steps, then averages the log l1 renormalisers. The CI is
/// t-based over batch means, plus a 1e-12 floor for summation rounding when
/// the batches agree exactly (constant or deterministic environments).
inline LyapunovEstimate lyapunov_estimate(const MetapopGraph& g, const EnvironmentModel& env,
                                          const LyapunovConfig& cfg = {}) {
  detail::require_matching(g, env);
  if (cfg.batches < 2) throw ValidationError("lyapunov_estimate needs at least 2 batches");
  std::uint64_t per_batch = cfg.n_steps / cfg.batches;
  per_batch -= per_batch % 2;  // whole periods for alternating environments
  if (per_batch == 0) throw ValidationError("n_steps too small for the batch layout");

  const std::size_t ns = env.num_states();
  std::vector<Matrix> a(ns);
  for (std::size_t w = 0; w < ns; ++w) a[w] = detail::env_mean_matrix(g, env.means(w));

  // Environment dynamics: periodic schedules are deterministic cycles.
  Matrix p;
  Vector start;
  if (env.is_periodic()) {
    const auto& order = env.periodic().order;
    p = Matrix(order.size(), order.size(), 0.0);
    for (std::size_t s = 0; s < order.size(); ++s) p(s, (s + 1) % order.size()) = 1.0;
    start.assign(order.size(), 1.0 / static_cast<double>(order.size()));
  } else {
    p = env.markov().transition;
    if (!chain_structure(p).irreducible) throw ValidationError("environment chain must be irreducible");
    start = stationary_distribution(p).values();
  }
  const auto env_cdf = detail::cumulative_rows(p);
  Vector start_cdf(start.size());
  std::partial_sum(start.begin(), start.end(), start_cdf.begin());
  auto state_of = [&](std::size_t s) { return env.is_periodic() ? env.periodic().order[s] : s; };

  std::vector<double> batch_mean(cfg.batches);
  parallel_for(cfg.batches, cfg.threads, [&](std::size_t bi) {
    Stream rng(cfg.seed, bi);
    std::size_t s = rng.categorical(start_cdf);
    Vector x(g.size(), 1.0 / static_cast<double>(g.size()));
    double acc = 0.0;
    for (std::uint64_t n = 0; n < cfg.burn_in + per_batch; ++n) {
      Vector y = multiply(x, a[state_of(s)]);
      const double norm = sum(y);
      if (!(norm > 0.0)) throw ValidationError("population vector vanished: a mean matrix kills every patch");
      for (double& v : y) v /= norm;
      x = std::move(y);
      if (n >= cfg.burn_in) acc += std::log(norm);
      s = rng.categorical(env_cdf[s]);
    }
    batch_mean[bi] = acc / static_cast<double>(per_batch);
  });

  const double nb = static_cast<double>(cfg.batches);
  double mean = 0.0;
  for (double v : batch_mean) mean += v;
  mean /= nb;
  double var = 0.0;
  for (double v : batch_mean) var += (v - mean) * (v - mean);
  var /= nb - 1.0;

  LyapunovEstimate est;
  est.gamma = mean;
  est.ci_halfwidth = detail::t_quantile_975(cfg.batches - 1) * std::sqrt(var / nb) + 1e-12 * (1.0 + std::abs(mean));
  est.n_steps = per_batch * cfg.batches;
  est.seed = cfg.seed;
  return est;
}

/// Lower bound on log rho for the two-patch Markov environment from the
/// strategy "stay in the source while it is good, stay in the sink while it is
/// bad". nu = beta / (alpha + beta); 0 log 0 = 0, and a needed log 0 gives -inf.
inline double random_env_lower_bound(double M1, double m2, double p, double q, double alpha, double beta) {
  if (!(alpha >= 0.0 && alpha <= 1.0 && beta >= 0.0 && beta <= 1.0) || alpha + beta == 0.0)
    throw ValidationError("alpha, beta must lie in [0,1] and not both vanish");
  if (!(p >= 0.0 && p <= 1.0 && q >= 0.0 && q <= 1.0)) throw ValidationError("p and q must lie in [0,1]");
  if (!(M1 >= 0.0 && m2 >= 0.0)) throw ValidationError("means must be non-negative");
  const double nu = beta / (alpha + beta);
  auto term = [](double coeff, double arg) {
    if (coeff == 0.0) return 0.0;
    return coeff * std::log(arg);  // log 0 = -inf
  };
  return term(nu, M1) + term(1.0 - nu, m2) + term(nu * alpha, p * q) + term(nu * (1.0 - alpha), 1.0 - p) +
         term((1.0 - nu) * (1.0 - beta), 1.0 - q);
}

}  // namespace metapop

#pragma once

// Random-disperser view of persistence. A single walker X moves on the patch
// graph with transition matrix D; the population persists with positive
// probability iff R = m_home * E[prod_{n=1}^{T-1} m_{X_n}] > 1, T the first
// return time to `home`.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "metapop/error.hpp"
#include "metapop/graph.hpp"
#include "metapop/linalg.hpp"
#include "metapop/parallel.hpp"
#include "metapop/rng.hpp"

namespace metapop {

inline constexpr double kCriticalBand = 1e-9;
inline constexpr double kDivergenceThreshold = 1.0 - 1e-12;

struct WalkConfig {
  std::size_t start_patch = 0;
  std::uint64_t max_steps = 10'000'000;
  std::uint64_t n_trials = 100'000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

enum class VerdictMethod { exact_linear_system, monte_carlo, spectral_equivalence, closed_form };

inline const char* to_string(VerdictMethod m) {
  switch (m) {
    case VerdictMethod::exact_linear_system: return "exact-linear-system";
    case VerdictMethod::monte_carlo: return "monte-carlo";
    case VerdictMethod::spectral_equivalence: return "spectral-equivalence";
    case VerdictMethod::closed_form: return "closed-form";
  }
  return "unknown";
}

struct PersistenceVerdict {
  double R_value = 0.0;  // may be +inf
  bool persists = false;
  VerdictMethod method = VerdictMethod::exact_linear_system;
  std::optional<double> ci_halfwidth;
  std::optional<double> truncated_mass;
  bool critical = false;  // |R - 1| <= 1e-9: sign not decidable at machine precision

  static PersistenceVerdict from_value(double r, VerdictMethod method) {
    PersistenceVerdict v;
    v.R_value = r;
    v.persists = r > 1.0;
    v.method = method;
    v.critical = std::isfinite(r) && std::abs(r - 1.0) <= kCriticalBand;
    return v;
  }
};

/// Expected number of first-return descendants: for a home set H, entry
/// (P, Q) of the returned matrix is m_P * E_P[prod_{n=1}^{T-1} m_{X_n}; X_T = Q]
/// with T the first n >= 1 such that X_n is in H. Returns nullopt when the
/// excursion series diverges (spectral radius of the sub-matrix on the
/// complement of H is >= 1 - 1e-12).
inline std::optional<Matrix> first_return_matrix(const Matrix& d, std::span<const double> means,
                                                 const std::vector<std::size_t>& home) {
  const std::size_t k = d.rows();
  std::vector<int> pos_in_home(k, -1), pos_out(k, -1);
  for (std::size_t h = 0; h < home.size(); ++h) pos_in_home[home[h]] = static_cast<int>(h);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i)
    if (pos_in_home[i] < 0) {
      pos_out[i] = static_cast<int>(out.size());
      out.push_back(i);
    }
  const std::size_t nh = home.size(), no = out.size();

  // g(j, Q) = m_j (d_jQ + sum_{l notin H} d_jl g(l, Q)),  j notin H.
  Matrix g(no, nh, 0.0);
  if (no > 0) {
    Matrix b(no, no);
    for (std::size_t a = 0; a < no; ++a)
      for (std::size_t c = 0; c < no; ++c) b(a, c) = means[out[a]] * d(out[a], out[c]);
    if (spectral_radius_nonnegative(b) >= kDivergenceThreshold) return std::nullopt;
    Matrix sys = Matrix::identity(no);
    for (std::size_t a = 0; a < no; ++a)
      for (std::size_t c = 0; c < no; ++c) sys(a, c) -= b(a, c);
    for (std::size_t q = 0; q < nh; ++q) {
      Vector rhs(no);
      for (std::size_t a = 0; a < no; ++a) rhs[a] = means[out[a]] * d(out[a], home[q]);
      auto sol = lu_solve(sys, rhs);
      if (!sol) return std::nullopt;  // pivot breakdown at the edge of divergence
      for (std::size_t a = 0; a < no; ++a) g(a, q) = (*sol)[a];
    }
  }
  Matrix y(nh, nh, 0.0);
  for (std::size_t p = 0; p < nh; ++p)
    for (std::size_t q = 0; q < nh; ++q) {
      double s = d(home[p], home[q]);
      for (std::size_t a = 0; a < no; ++a) s += d(home[p], out[a]) * g(a, q);
      y(p, q) = means[home[p]] * s;
    }
  return y;
}

inline void require_irreducible(const MetapopGraph& g) {
  if (!validate_graph(g).irreducible)
    throw ValidationError("dispersal graph is not irreducible");
}

inline void require_patch(const MetapopGraph& g, std::size_t p) {
  if (p >= g.size())
    throw ValidationError("patch index " + std::to_string(p) + " out of range for K=" + std::to_string(g.size()));
}

inline PersistenceVerdict return_functional_exact(const MetapopGraph& g, std::size_t home) {
  require_patch(g, home);
  require_irreducible(g);
  const auto y = first_return_matrix(g.dispersal(), g.means(), {home});
  const double r = y ? (*y)(0, 0) : std::numeric_limits<double>::infinity();
  return PersistenceVerdict::from_value(r, VerdictMethod::exact_linear_system);
}

struct Excursion {
  std::vector<std::size_t> path;  // starts at home; ends at home unless truncated
  std::uint64_t T = 0;            // number of steps taken
  bool truncated = false;
};

namespace detail {

inline std::vector<Vector> cumulative_rows(const Matrix& d) {
  std::vector<Vector> cdf(d.rows(), Vector(d.cols()));
  for (std::size_t i = 0; i < d.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d.cols(); ++j) {
      s += d(i, j);
      cdf[i][j] = s;
    }
  }
  return cdf;
}

}  // namespace detail

/// One excursion of the walker from `home` until its first return.
inline Excursion sample_excursion(const MetapopGraph& g, std::size_t home, Stream& rng,
                                  std::uint64_t max_steps = 10'000'000) {
  require_patch(g, home);
  const auto cdf = detail::cumulative_rows(g.dispersal());
  Excursion ex;
  ex.path.push_back(home);
  std::size_t x = home;
  while (ex.T < max_steps) {
    x = rng.categorical(cdf[x]);
    ++ex.T;
    ex.path.push_back(x);
    if (x == home) return ex;
  }
  ex.truncated = true;
  return ex;
}

inline Excursion sample_excursion(const MetapopGraph& g, std::size_t home, std::uint64_t seed,
                                  std::uint64_t max_steps = 10'000'000) {
  Stream rng(seed, 0);
  return sample_excursion(g, home, rng, max_steps);
}

/// Monte Carlo estimate of R: mean over excursions of m_home * prod m_{X_n}.
/// Excursions hitting max_steps contribute their partial product and are
/// counted in truncated_mass.
inline PersistenceVerdict return_functional_mc(const MetapopGraph& g, std::size_t home, const WalkConfig& cfg) {
  require_patch(g, home);
  require_irreducible(g);
  if (cfg.n_trials == 0 || cfg.max_steps == 0) throw ValidationError("n_trials and max_steps must be >= 1");
  const auto cdf = detail::cumulative_rows(g.dispersal());
  Vector log_m(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) log_m[i] = std::log(g.mean(i));

  std::vector<double> values(cfg.n_trials);
  std::vector<char> truncated(cfg.n_trials, 0);
  parallel_for(cfg.n_trials, cfg.threads, [&](std::size_t t) {
    Stream rng(cfg.seed, t);
    double log_prod = log_m[home];
    std::size_t x = home;
    std::uint64_t steps = 0;
    for (;;) {
      x = rng.categorical(cdf[x]);
      ++steps;
      if (x == home) break;
      log_prod += log_m[x];
      if (steps >= cfg.max_steps) {
        truncated[t] = 1;
        break;
      }
    }
    values[t] = std::exp(log_prod);
  });

  double mean = 0.0;
  std::uint64_t cut = 0;
  for (std::size_t t = 0; t < values.size(); ++t) {
    mean += values[t];
    cut += static_cast<std::uint64_t>(truncated[t]);
  }
  const double n = static_cast<double>(values.size());
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var = values.size() > 1 ? var / (n - 1.0) : 0.0;

  PersistenceVerdict v = PersistenceVerdict::from_value(mean, VerdictMethod::monte_carlo);
  v.ci_halfwidth = 1.959963984540054 * std::sqrt(var / n);
  v.truncated_mass = static_cast<double>(cut) / n;
  return v;
}

/// Two-habitat shape: patch 0 has mean M, every other patch shares mean m.
struct TwoHabitatShape {
  double M = 0.0;
  double m = 0.0;
  double p = 0.0;  // probability of leaving the source
};

inline TwoHabitatShape two_habitat_shape(const MetapopGraph& g) {
  if (g.size() < 2) throw ValidationError("two-habitat shape needs at least one sink patch");
  TwoHabitatShape s{g.mean(0), g.mean(1), 0.0};
  for (std::size_t j = 2; j < g.size(); ++j)
    if (g.mean(j) != s.m)
      throw ValidationError("two-habitat shape violated: sink patches 1 and " + std::to_string(j) +
                            " have different means");
  for (std::size_t j = 1; j < g.size(); ++j) s.p += g.d(0, j);
  if (!(s.p > 0.0)) throw ValidationError("two-habitat shape: the source never disperses (p = 0)");
  return s;
}

/// Depleting rate e = E[m^S], S the time spent in sinks between source visits.
/// Solves (I - m D_ss) a = m d_{s,0} over the sink patches, then averages a
/// over the first sink visited. Returns +inf if the series diverges.
inline double depleting_rate(const MetapopGraph& g) {
  const TwoHabitatShape s = two_habitat_shape(g);
  require_irreducible(g);
  const std::size_t ns = g.size() - 1;
  Matrix b(ns, ns);
  for (std::size_t a = 0; a < ns; ++a)
    for (std::size_t c = 0; c < ns; ++c) b(a, c) = s.m * g.d(a + 1, c + 1);
  if (spectral_radius_nonnegative(b) >= kDivergenceThreshold) return std::numeric_limits<double>::infinity();
  Matrix sys = Matrix::identity(ns);
  Vector rhs(ns);
  for (std::size_t a = 0; a < ns; ++a) {
    for (std::size_t c = 0; c < ns; ++c) sys(a, c) -= b(a, c);
    rhs[a] = s.m * g.d(a + 1, 0);
  }
  const auto sol = lu_solve(sys, rhs);
  if (!sol) return std::numeric_limits<double>::infinity();
  double e = 0.0;
  for (std::size_t a = 0; a < ns; ++a) e += g.d(0, a + 1) / s.p * (*sol)[a];
  return e;
}

/// Two-habitat criterion value M(1-p) + e M p.
inline double two_habitat_criterion(const MetapopGraph& g) {
  const TwoHabitatShape s = two_habitat_shape(g);
  const double e = depleting_rate(g);
  return s.M * (1.0 - s.p) + e * s.M * s.p;
}

/// Closed form for the two-patch chain: e = m q / (1 - m (1 - q)).
inline double two_patch_depleting_rate(double m, double q) { return m * q / (1.0 - m * (1.0 - q)); }

}  // namespace metapop

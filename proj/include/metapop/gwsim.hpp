#pragma once

// Multitype Galton-Watson simulator on the patch graph. Each generation every
// individual reproduces with its patch's offspring law (the law may depend on
// the environment state), then each offspring moves independently by D.
//
// Populations are per-patch counts: offspring totals are drawn from the
// Z-fold convolution of the law and dispersal is multinomial, so one
// generation costs O(K^2) draws regardless of population size.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "metapop/envdyn.hpp"
#include "metapop/error.hpp"
#include "metapop/graph.hpp"
#include "metapop/linalg.hpp"
#include "metapop/parallel.hpp"
#include "metapop/rng.hpp"
#include "metapop/spectral.hpp"

namespace metapop {

using Count = std::uint64_t;

class OffspringLaw {
 public:
  enum class Kind { poisson, geometric, deterministic, bernoulli_pair };

  static OffspringLaw poisson(double mean) { return {Kind::poisson, mean, 0.0, 0}; }
  /// P(N = k) = (1 - t) t^k on {0, 1, ...} with t = mean / (1 + mean).
  static OffspringLaw geometric(double mean) { return {Kind::geometric, mean, 0.0, 0}; }
  static OffspringLaw deterministic(Count k) { return {Kind::deterministic, static_cast<double>(k), 0.0, k}; }
  /// N = 0 with probability p0, N = n otherwise.
  static OffspringLaw bernoulli_pair(double p0, Count n) {
    return {Kind::bernoulli_pair, static_cast<double>(n) * (1.0 - p0), p0, n};
  }

  Kind kind() const noexcept { return kind_; }
  double mean() const noexcept { return mean_; }
  double p0() const noexcept { return p0_; }
  Count n() const noexcept { return n_; }

  /// P(N = 1) < 1.
  bool non_degenerate() const noexcept {
    switch (kind_) {
      case Kind::deterministic: return n_ != 1;
      case Kind::bernoulli_pair: return !(n_ == 1 && p0_ == 0.0);
      default: return true;
    }
  }

  /// Total offspring of z independent parents.
  Count sample_sum(Count z, Stream& rng) const {
    if (z == 0) return 0;
    switch (kind_) {
      case Kind::poisson: {
        if (mean_ == 0.0) return 0;
        std::poisson_distribution<Count> d(mean_ * static_cast<double>(z));
        return d(rng);
      }
      case Kind::geometric: {
        if (mean_ == 0.0) return 0;
        std::negative_binomial_distribution<Count> d(z, 1.0 / (1.0 + mean_));
        return d(rng);
      }
      case Kind::deterministic: return n_ * z;
      case Kind::bernoulli_pair: {
        std::binomial_distribution<Count> d(z, 1.0 - p0_);
        return n_ * d(rng);
      }
    }
    return 0;
  }

  std::string describe() const {
    switch (kind_) {
      case Kind::poisson: return "poisson(" + std::to_string(mean_) + ")";
      case Kind::geometric: return "geometric(" + std::to_string(mean_) + ")";
      case Kind::deterministic: return "deterministic(" + std::to_string(n_) + ")";
      case Kind::bernoulli_pair: return "bernoulli-pair(" + std::to_string(p0_) + "," + std::to_string(n_) + ")";
    }
    return "unknown";
  }

 private:
  OffspringLaw(Kind k, double mean, double p0, Count n) : kind_(k), mean_(mean), p0_(p0), n_(n) {
    if (!(mean_ >= 0.0) || !std::isfinite(mean_)) throw ValidationError("offspring mean must be finite and >= 0");
    if (!(p0_ >= 0.0 && p0_ <= 1.0)) throw ValidationError("bernoulli-pair p0 must lie in [0,1]");
  }

  Kind kind_;
  double mean_;
  double p0_;
  Count n_;
};

/// laws[w][i]: law of patch i in environment state w.
struct LawTable {
  std::vector<std::vector<OffspringLaw>> laws;
  bool allow_degenerate = false;  // permit laws with P(N = 1) = 1, e.g. deterministic(1)

  static LawTable poisson(const MetapopGraph& g) {
    std::vector<OffspringLaw> row;
    for (double m : g.means()) row.push_back(OffspringLaw::poisson(m));
    return {{row}, false};
  }

  static LawTable poisson(const EnvironmentModel& env) {
    LawTable t;
    for (std::size_t w = 0; w < env.num_states(); ++w) {
      std::vector<OffspringLaw> row;
      for (double m : env.means(w)) row.push_back(OffspringLaw::poisson(m));
      t.laws.push_back(std::move(row));
    }
    return t;
  }

  static LawTable uniform(std::size_t k, const OffspringLaw& law) {
    return {{std::vector<OffspringLaw>(k, law)}, law.kind() == OffspringLaw::Kind::deterministic && law.n() == 1};
  }
};

struct SimConfig {
  std::uint64_t horizon = 200;
  std::uint64_t n_runs = 10'000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t start_patch = 0;
  Count initial = 1;
  double escape_cap = 1e7;
  std::size_t lineage_slots = 16;  // sampled ancestral lines kept per patch
};

struct SimReport {
  std::uint64_t n_runs = 0;
  std::uint64_t horizon = 0;
  std::uint64_t seed = 0;
  std::uint64_t n_survived = 0;  // alive at the horizon (escaped runs included)
  std::uint64_t n_escaped = 0;   // hit the escape cap at some point
  double survival_prob = 0.0;
  double survival_ci = 0.0;
  std::optional<double> growth_rate_hat;  // mean slope of log |Z_n| on [horizon/2, horizon]
  std::optional<double> growth_rate_ci;
  std::optional<Vector> occupancy_hat;  // mean ancestral-line visit frequencies of a uniform survivor
  std::optional<Vector> occupancy_ci;
  std::optional<double> martingale_drift;  // largest relative change of mean |Z_n| / rho^n over [horizon/2, horizon]
};

namespace detail {

struct EnvView {
  const EnvironmentModel* env = nullptr;
  Vector start_cdf;
  std::vector<Vector> step_cdf;

  explicit EnvView(const EnvironmentModel* e) : env(e) {
    if (!env || env->is_periodic()) return;
    const Matrix& p = env->markov().transition;
    const Vector u = stationary_distribution(p).values();
    start_cdf.resize(u.size());
    std::partial_sum(u.begin(), u.end(), start_cdf.begin());
    step_cdf = cumulative_rows(p);
  }

  // State at generation n; Markov states advance through `state`.
  std::size_t first(Stream& rng) const {
    if (!env) return 0;
    if (env->is_periodic()) return env->periodic().order[0];
    return rng.categorical(start_cdf);
  }
  std::size_t next(std::size_t state, std::uint64_t n, Stream& rng) const {
    if (!env) return 0;
    if (env->is_periodic()) {
      const auto& o = env->periodic().order;
      return o[n % o.size()];
    }
    return rng.categorical(step_cdf[state]);
  }
};

inline void check_laws(const MetapopGraph& g, const EnvironmentModel* env, const LawTable& laws) {
  const std::size_t states = env ? env->num_states() : 1;
  if (laws.laws.size() != states)
    throw ValidationError("offspring law table needs one row per environment state");
  for (std::size_t w = 0; w < states; ++w) {
    if (laws.laws[w].size() != g.size()) throw ValidationError("offspring law table needs one law per patch");
    const Vector& means = env ? env->means(w) : g.means();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const OffspringLaw& law = laws.laws[w][i];
      if (std::abs(law.mean() - means[i]) > 1e-12 * std::max(1.0, means[i]))
        throw ValidationError("offspring law " + law.describe() + " of patch " + std::to_string(i) +
                              " does not have mean " + std::to_string(means[i]));
    }
    if (!laws.allow_degenerate && !laws.laws[w][0].non_degenerate())
      throw ValidationError("patch 0 has P(N = 1) = 1; set allow_degenerate to force it");
  }
}

/// Multinomial(n, probs) by sequential conditional binomials.
inline void multinomial(Count n, std::span<const double> probs, std::span<Count> out, Stream& rng) {
  double rest = 1.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (n == 0 || j + 1 == probs.size()) {
      out[j] = j + 1 == probs.size() ? n : 0;
      n -= out[j];
      continue;
    }
    const double pj = probs[j];
    if (pj <= 0.0) {
      out[j] = 0;
    } else if (pj >= rest) {
      out[j] = n;
    } else {
      std::binomial_distribution<Count> d(n, pj / rest);
      out[j] = d(rng);
    }
    n -= out[j];
    rest -= pj;
  }
}

struct RunResult {
  bool alive = false;
  bool escaped = false;
  std::vector<double> log_size;  // log |Z_n| + accumulated thinning, n = 0..horizon
  Vector occupancy;              // visit frequencies of one uniform survivor
  std::vector<std::vector<double>> series;  // optional per-generation counts, rescaled
};

class Runner {
 public:
  Runner(const MetapopGraph& g, const EnvironmentModel* env, const LawTable& laws, const SimConfig& cfg)
      : g_(g), env_(env), laws_(laws), cfg_(cfg) {}

  RunResult run(std::uint64_t index, bool lineage, bool series) const {
    const std::size_t k = g_.size();
    Stream rng(cfg_.seed, index);
    std::vector<Count> z(k, 0), next(k), row(k);
    z[cfg_.start_patch] = cfg_.initial;
    Matrix flow(k, k);
    double log_scale = 0.0;

    // Slot s of patch j: ancestral visit tallies of a sampled individual there.
    const std::size_t slots = std::max<std::size_t>(1, cfg_.lineage_slots);
    std::vector<std::vector<std::vector<std::uint32_t>>> tally(k), fresh(k);
    if (lineage) {
      tally[cfg_.start_patch].assign(slots, std::vector<std::uint32_t>(k, 0));
      for (auto& t : tally[cfg_.start_patch]) t[cfg_.start_patch] = 1;
    }

    RunResult out;
    auto record = [&](const std::vector<Count>& counts) {
      const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), Count{0}));
      out.log_size.push_back(total > 0.0 ? std::log(total) + log_scale : -std::numeric_limits<double>::infinity());
      if (series) {
        std::vector<double> s(k);
        for (std::size_t j = 0; j < k; ++j) s[j] = static_cast<double>(counts[j]) * std::exp(log_scale);
        out.series.push_back(std::move(s));
      }
    };
    record(z);

    std::size_t state = env_view_.first(rng);
    for (std::uint64_t n = 0; n < cfg_.horizon; ++n) {
      if (n > 0) state = env_view_.next(state, n, rng);
      const auto& laws = laws_.laws[env_ ? state : 0];
      std::fill(next.begin(), next.end(), 0);
      for (std::size_t i = 0; i < k; ++i) {
        const Count born = laws[i].sample_sum(z[i], rng);
        multinomial(born, g_.dispersal().row(i), row, rng);
        for (std::size_t j = 0; j < k; ++j) {
          flow(i, j) = static_cast<double>(row[j]);
          next[j] += row[j];
        }
      }
      if (lineage) {
        for (std::size_t j = 0; j < k; ++j) {
          fresh[j].clear();
          if (next[j] == 0) continue;
          Vector cdf(k);
          double acc = 0.0;
          for (std::size_t i = 0; i < k; ++i) cdf[i] = acc += flow(i, j);
          for (std::size_t s = 0; s < slots; ++s) {
            const std::size_t i = rng.categorical(cdf);
            const auto& parents = tally[i];
            std::uniform_int_distribution<std::size_t> pick(0, parents.size() - 1);
            fresh[j].push_back(parents[pick(rng)]);
            ++fresh[j].back()[j];
          }
        }
        std::swap(tally, fresh);
      }
      z.swap(next);
      double total = 0.0;
      for (Count c : z) total += static_cast<double>(c);
      if (total == 0.0) {
        record(z);
        return out;
      }
      // Above the cap the run counts as surviving; keep following it at a
      // thinned scale so the growth window stays available.
      while (total > cfg_.escape_cap) {
        out.escaped = true;
        total = 0.0;
        for (Count& c : z) {
          std::binomial_distribution<Count> half(c, 0.5);
          c = half(rng);
          total += static_cast<double>(c);
        }
        log_scale += std::log(2.0);
      }
      record(z);
    }
    out.alive = true;
    if (lineage) {
      Vector cdf(k);
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) cdf[j] = acc += static_cast<double>(z[j]);
      const std::size_t j = rng.categorical(cdf);
      std::uniform_int_distribution<std::size_t> pick(0, tally[j].size() - 1);
      const auto& t = tally[j][pick(rng)];
      out.occupancy.resize(k);
      const double len = static_cast<double>(cfg_.horizon + 1);
      for (std::size_t i = 0; i < k; ++i) out.occupancy[i] = static_cast<double>(t[i]) / len;
    }
    return out;
  }

 private:
  const MetapopGraph& g_;
  const EnvironmentModel* env_;
  LawTable laws_;
  SimConfig cfg_;
  EnvView env_view_{env_};
};

inline void check_config(const MetapopGraph& g, const SimConfig& cfg) {
  if (cfg.horizon < 1) throw ValidationError("horizon must be >= 1");
  if (cfg.n_runs < 1) throw ValidationError("n_runs must be >= 1");
  if (cfg.start_patch >= g.size()) throw ValidationError("start patch out of range");
  if (cfg.initial < 1) throw ValidationError("initial population must be >= 1");
  if (!(cfg.escape_cap >= 2.0)) throw ValidationError("escape cap must be >= 2");
}

inline double ols_slope(std::span<const double> y, std::uint64_t first) {
  const double n = static_cast<double>(y.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    sx += static_cast<double>(first + t);
    sy += y[t];
  }
  const double mx = sx / n, my = sy / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double dx = static_cast<double>(first + t) - mx;
    sxy += dx * (y[t] - my);
    sxx += dx * dx;
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

inline std::pair<double, double> mean_ci(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  double m = 0.0;
  for (double x : v) m += x;
  m /= n;
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var = v.size() > 1 ? var / (n - 1.0) : 0.0;
  return {m, 1.959963984540054 * std::sqrt(var / n)};
}

/// Per-step growth rate of the mean process, when it is defined.
inline std::optional<double> reference_growth(const MetapopGraph& g, const EnvironmentModel* env) {
  try {
    if (!env) return growth_rate(g).rho;
    if (env->is_periodic()) return periodic_growth_rate(g, *env);
  } catch (const ValidationError&) {
  }
  return std::nullopt;
}

}  // namespace detail

/// Independent runs from `initial` individuals in `start_patch`. A run
/// survives if it is alive at the horizon; runs passing the escape cap are
/// thinned by 1/2 as often as needed and followed on a log scale.
inline SimReport simulate(const MetapopGraph& g, const EnvironmentModel* env, const LawTable& laws,
                          const SimConfig& cfg) {
  if (env) detail::require_matching(g, *env);
  detail::check_laws(g, env, laws);
  detail::check_config(g, cfg);
  const detail::Runner runner(g, env, laws, cfg);

  std::vector<detail::RunResult> runs(cfg.n_runs);
  parallel_for(cfg.n_runs, cfg.threads, [&](std::size_t r) { runs[r] = runner.run(r, true, false); });

  SimReport rep;
  rep.n_runs = cfg.n_runs;
  rep.horizon = cfg.horizon;
  rep.seed = cfg.seed;
  const std::uint64_t lo = cfg.horizon / 2;
  const auto rho = detail::reference_growth(g, env);
  std::vector<double> slopes;
  std::vector<Vector> occ;
  double drift = 0.0;
  std::vector<double> w_sum;
  for (const auto& r : runs) {
    rep.n_escaped += r.escaped;
    if (!r.alive) continue;
    ++rep.n_survived;
    const std::span<const double> window(r.log_size.data() + lo, r.log_size.size() - lo);
    if (window.size() >= 2) slopes.push_back(detail::ols_slope(window, lo));
    occ.push_back(r.occupancy);
    if (rho) {
      if (w_sum.empty()) w_sum.assign(window.size(), 0.0);
      for (std::size_t t = 0; t < window.size(); ++t)
        w_sum[t] += std::exp(window[t] - static_cast<double>(lo + t) * std::log(*rho));
    }
  }
  // Path of the survivor-averaged |Z_n| / rho^n across the window.
  for (std::size_t t = 1; t < w_sum.size(); ++t) drift = std::max(drift, std::abs(w_sum[t] / w_sum[0] - 1.0));
  const double n = static_cast<double>(cfg.n_runs);
  rep.survival_prob = static_cast<double>(rep.n_survived) / n;
  rep.survival_ci = 1.959963984540054 * std::sqrt(rep.survival_prob * (1.0 - rep.survival_prob) / n);
  if (!slopes.empty()) {
    const auto [m, ci] = detail::mean_ci(slopes);
    rep.growth_rate_hat = m;
    rep.growth_rate_ci = ci;
  }
  if (!occ.empty()) {
    const std::size_t k = g.size();
    Vector mean(k), ci(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> col(occ.size());
      for (std::size_t r = 0; r < occ.size(); ++r) col[r] = occ[r][i];
      std::tie(mean[i], ci[i]) = detail::mean_ci(col);
    }
    rep.occupancy_hat = std::move(mean);
    rep.occupancy_ci = std::move(ci);
    if (rho && *rho > 1.0) rep.martingale_drift = drift;
  }
  return rep;
}

inline SimReport simulate(const MetapopGraph& g, const SimConfig& cfg) {
  return simulate(g, nullptr, LawTable::poisson(g), cfg);
}

struct OccupancyEstimate {
  Vector mean;
  Vector ci;
  std::uint64_t n_survivors = 0;
};

/// Ancestral-line occupancy of a uniformly chosen survivor, averaged over the
/// runs alive at the horizon.
inline OccupancyEstimate survivor_occupancy(const MetapopGraph& g, const EnvironmentModel* env,
                                            const LawTable& laws, const SimConfig& cfg) {
  const SimReport rep = simulate(g, env, laws, cfg);
  if (!rep.occupancy_hat)
    throw StatisticalError("no run survived to the horizon; increase n_runs or check that rho > 1");
  return {*rep.occupancy_hat, *rep.occupancy_ci, rep.n_survived};
}

struct ExtinctionEstimate {
  double probability = 0.0;
  double ci_halfwidth = 0.0;
  std::uint64_t undecided = 0;  // runs hitting the generation cap while small
};

/// Fraction of runs from `initial` individuals in `home` that die out before
/// reaching the escape cap. Runs still undecided after `max_generations`
/// count as not extinct.
inline ExtinctionEstimate extinction_probability(const MetapopGraph& g, const EnvironmentModel* env,
                                                 const LawTable& laws, std::size_t home, SimConfig cfg,
                                                 std::uint64_t max_generations = 100'000) {
  cfg.start_patch = home;
  if (env) detail::require_matching(g, *env);
  detail::check_laws(g, env, laws);
  detail::check_config(g, cfg);
  const std::size_t k = g.size();
  const detail::EnvView view(env);

  std::vector<char> outcome(cfg.n_runs, 0);  // 0 extinct, 1 escaped, 2 undecided
  parallel_for(cfg.n_runs, cfg.threads, [&](std::size_t r) {
    Stream rng(cfg.seed, r);
    std::vector<Count> z(k, 0), next(k), row(k);
    z[home] = cfg.initial;
    std::size_t state = view.first(rng);
    for (std::uint64_t n = 0; n < max_generations; ++n) {
      if (n > 0) state = view.next(state, n, rng);
      const auto& law = laws.laws[env ? state : 0];
      std::fill(next.begin(), next.end(), 0);
      for (std::size_t i = 0; i < k; ++i) {
        detail::multinomial(law[i].sample_sum(z[i], rng), g.dispersal().row(i), row, rng);
        for (std::size_t j = 0; j < k; ++j) next[j] += row[j];
      }
      z.swap(next);
      double total = 0.0;
      for (Count c : z) total += static_cast<double>(c);
      if (total == 0.0) return;
      if (total > cfg.escape_cap) {
        outcome[r] = 1;
        return;
      }
    }
    outcome[r] = 2;
  });
  ExtinctionEstimate est;
  std::uint64_t dead = 0;
  for (char o : outcome) {
    dead += o == 0;
    est.undecided += o == 2;
  }
  const double n = static_cast<double>(cfg.n_runs);
  est.probability = static_cast<double>(dead) / n;
  est.ci_halfwidth = 1.959963984540054 * std::sqrt(est.probability * (1.0 - est.probability) / n);
  return est;
}

/// Per-generation patch counts of run `run` (rescaled by the thinning factor
/// once the escape cap is passed).
inline std::vector<std::vector<double>> simulate_series(const MetapopGraph& g, const EnvironmentModel* env,
                                                        const LawTable& laws, const SimConfig& cfg,
                                                        std::uint64_t run = 0) {
  if (env) detail::require_matching(g, *env);
  detail::check_laws(g, env, laws);
  detail::check_config(g, cfg);
  return detail::Runner(g, env, laws, cfg).run(run, true, true).series;  // same draws as in simulate()
}

}  // namespace metapop

#pragma once

// Subcommand implementations behind tools/metapop. Each command takes the
// parsed config plus flag overrides and returns a JSON report and, where it
// makes sense, a CSV table. Reports never contain the thread count, so they
// are byte-identical for any --threads value.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metapop/disperser.hpp"
#include "metapop/envdyn.hpp"
#include "metapop/error.hpp"
#include "metapop/graph.hpp"
#include "metapop/gwsim.hpp"
#include "metapop/io.hpp"
#include "metapop/ldp.hpp"
#include "metapop/motifs.hpp"
#include "metapop/parallel.hpp"
#include "metapop/spectral.hpp"

namespace metapop {

inline constexpr const char* kVersion = "0.1.0";

struct CliOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> trials;
  std::optional<std::uint64_t> horizon;
  unsigned threads = 1;
};

struct CommandOutput {
  OJson report;
  std::string csv;  // empty when the command has no tabular form
};

namespace detail {

inline Json& section(Json& cfg, const char* key) {
  if (!cfg.contains(key) || !cfg[key].is_object()) cfg[key] = Json::object();
  return cfg[key];
}

template <typename T>
T setting(Json& sec, const char* key, T fallback) {
  if (!sec.contains(key)) sec[key] = fallback;
  return sec[key].get<T>();
}

/// Model from "graph", "motif" or "pipeline"; a bare {"m", "D"} document is a graph.
inline MetapopGraph resolve_model(const Json& cfg) {
  if (cfg.contains("graph")) return parse_graph(cfg.at("graph"));
  if (cfg.contains("motif")) return collapse(parse_motif(cfg.at("motif")));
  if (cfg.contains("pipeline")) return collapse(pipeline_to_motif(parse_pipeline(cfg.at("pipeline"))));
  if (cfg.contains("m") && cfg.contains("D")) return parse_graph(cfg);
  throw ValidationError("config needs a \"graph\", \"motif\" or \"pipeline\" model");
}

inline OJson assumptions_json(const AssumptionReport& a) {
  OJson j;
  j["irreducible"] = a.irreducible;
  j["aperiodic"] = a.aperiodic;
  j["positive_means"] = a.positive_means;
  j["period"] = a.period;
  return j;
}

inline OJson variational_json(const VariationalResult& v) {
  OJson j;
  j["log_rho"] = v.log_rho;
  j["rho"] = std::exp(v.log_rho);
  j["phi"] = vec_json(v.phi.values());
  j["I"] = v.I_value;
  j["R"] = v.R_value;
  if (v.method == VariationalMethod::simplex_optimize) j["iterations"] = v.iterations;
  return j;
}

inline OJson delta(const std::string& quantity, const std::string& a, const std::string& b, double d) {
  OJson j;
  j["quantity"] = quantity;
  j["methods"] = {a, b};
  j["delta"] = d;
  return j;
}

inline OJson agreement(const std::string& quantity, const std::string& a, const std::string& b, bool agree) {
  OJson j;
  j["quantity"] = quantity;
  j["methods"] = {a, b};
  j["agree"] = agree;
  return j;
}

inline OJson skipped(const std::exception& e) {
  OJson j;
  j["skipped"] = e.what();
  return j;
}

inline OJson envelope(const std::string& command, const Json& cfg, std::uint64_t seed) {
  OJson rep;
  rep["command"] = command;
  OJson prov;
  prov["config_hash"] = fnv1a_hex(dump(cfg, -1));
  prov["seed"] = seed;
  prov["version"] = kVersion;
  rep["provenance"] = std::move(prov);
  rep["config"] = OJson::parse(dump(cfg, -1));
  return rep;
}

inline WalkConfig walk_config(Json& cfg, const CliOptions& opt, std::uint64_t seed) {
  Json& mc = section(cfg, "mc");
  if (opt.trials) mc["n_trials"] = *opt.trials;
  WalkConfig w;
  w.start_patch = setting<std::size_t>(mc, "start_patch", 0);
  w.max_steps = setting<std::uint64_t>(mc, "max_steps", w.max_steps);
  w.n_trials = setting<std::uint64_t>(mc, "n_trials", w.n_trials);
  w.seed = seed;
  w.threads = opt.threads;
  return w;
}

inline std::uint64_t resolve_seed(Json& cfg, const CliOptions& opt) {
  if (opt.seed) cfg["seed"] = *opt.seed;
  if (!cfg.contains("seed")) cfg["seed"] = 1;
  return cfg["seed"].get<std::uint64_t>();
}

}  // namespace detail

/// Spectral, disperser, and both variational methods on a fixed environment,
/// with the pairwise cross-check table. Monte Carlo runs when "mc.enabled" is
/// set or --trials is given.
inline CommandOutput cmd_analyze(Json cfg, const CliOptions& opt) {
  const std::uint64_t seed = detail::resolve_seed(cfg, opt);
  const MetapopGraph g = detail::resolve_model(cfg);
  Json& mcs = detail::section(cfg, "mc");
  const bool run_mc = detail::setting<bool>(mcs, "enabled", opt.trials.has_value()) || opt.trials.has_value();
  mcs["enabled"] = run_mc;
  const WalkConfig wc = detail::walk_config(cfg, opt, seed);
  require_patch(g, wc.start_patch);

  OJson results;
  OJson checks = OJson::array();
  const AssumptionReport a = validate_graph(g);
  results["assumptions"] = detail::assumptions_json(a);
  if (!a.irreducible) throw ValidationError("dispersal graph is not irreducible");

  const OccupancyVector u = stationary_distribution(g);
  results["stationary"] = vec_json(u.values());

  const SpectralData sd = growth_rate(g);
  std::optional<OccupancyVector> phi_spec;
  {
    OJson j;
    j["rho"] = sd.rho;
    j["log_rho"] = std::log(sd.rho);
    j["left"] = vec_json(sd.left);
    j["right"] = vec_json(sd.right);
    if (!sd.periodic) {
      phi_spec = occupancy_spectral(sd);
      j["phi"] = vec_json(phi_spec->values());
    }
    j["residual"] = sd.residual;
    j["periodic"] = sd.periodic;
    results["spectral"] = std::move(j);
  }

  const PersistenceVerdict exact = return_functional_exact(g, wc.start_patch);
  results["disperser-exact"] = verdict_json(exact);
  checks.push_back(detail::agreement("persists", "spectral", "disperser-exact", (sd.rho > 1.0) == exact.persists));

  std::optional<VariationalResult> tw, sx;
  try {
    tw = argmax_occupancy(g);
    results["twisted-eigen"] = detail::variational_json(*tw);
  } catch (const ValidationError& e) {
    results["twisted-eigen"] = detail::skipped(e);
  }
  try {
    sx = max_rate_gap(g);
    results["simplex-optimize"] = detail::variational_json(*sx);
  } catch (const ValidationError& e) {
    results["simplex-optimize"] = detail::skipped(e);
  }
  const double log_rho = std::log(sd.rho);
  if (tw) checks.push_back(detail::delta("log_rho", "spectral", "twisted-eigen", std::abs(log_rho - tw->log_rho)));
  if (sx) checks.push_back(detail::delta("log_rho", "spectral", "simplex-optimize", std::abs(log_rho - sx->log_rho)));
  if (tw && sx)
    checks.push_back(detail::delta("log_rho", "twisted-eigen", "simplex-optimize", std::abs(tw->log_rho - sx->log_rho)));
  if (phi_spec && tw)
    checks.push_back(detail::delta("phi", "spectral", "twisted-eigen", distance_inf(*phi_spec, tw->phi)));
  if (phi_spec && sx)
    checks.push_back(detail::delta("phi", "spectral", "simplex-optimize", distance_inf(*phi_spec, sx->phi)));
  if (tw && sx) checks.push_back(detail::delta("phi", "twisted-eigen", "simplex-optimize", distance_inf(tw->phi, sx->phi)));

  if (g.size() >= 2) {
    try {
      const double crit = two_habitat_criterion(g);
      OJson j;
      j["e"] = depleting_rate(g);
      j["criterion"] = crit;
      results["two-habitat"] = std::move(j);
      if (wc.start_patch == 0)
        checks.push_back(detail::delta("R", "disperser-exact", "two-habitat", std::abs(exact.R_value - crit)));
    } catch (const ValidationError&) {
      // not two-habitat shaped; nothing to compare
    }
  }

  if (run_mc) {
    const PersistenceVerdict mc = return_functional_mc(g, wc.start_patch, wc);
    results["monte-carlo"] = verdict_json(mc);
    checks.push_back(detail::delta("R", "disperser-exact", "monte-carlo", std::abs(exact.R_value - mc.R_value)));
  }

  OJson verdict;
  verdict["rho"] = sd.rho;
  verdict["persists"] = sd.rho > 1.0;
  verdict["critical"] = std::abs(sd.rho - 1.0) <= kCriticalBand;

  OJson rep = detail::envelope("analyze", cfg, seed);
  rep["results"] = std::move(results);
  rep["cross_checks"] = std::move(checks);
  rep["verdict"] = std::move(verdict);

  CommandOutput out{std::move(rep), {}};
  if (g.size() == 2 && a.aperiodic) {
    std::vector<std::vector<double>> rows;
    for (const auto& p : landscape_grid(g)) rows.push_back({p.f1, p.R, p.I, p.R_minus_I});
    out.csv = csv({"f1", "R", "I", "R_minus_I"}, rows);
  } else {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < g.size(); ++i)
      rows.push_back({static_cast<double>(i), g.mean(i), u[i], phi_spec ? (*phi_spec)[i] : std::nan(""), sd.left[i],
                      sd.right[i]});
    out.csv = csv({"patch", "m", "u", "phi", "left", "right"}, rows);
  }
  return out;
}

inline std::optional<EnvironmentModel> resolve_env(const Json& cfg) {
  if (!cfg.contains("env")) return std::nullopt;
  return parse_env(cfg.at("env"));
}

/// Galton-Watson ground truth. CSV is the count series of run 0.
inline CommandOutput cmd_simulate(Json cfg, const CliOptions& opt) {
  const std::uint64_t seed = detail::resolve_seed(cfg, opt);
  const MetapopGraph g = detail::resolve_model(cfg);
  const auto env = resolve_env(cfg);
  Json& s = detail::section(cfg, "sim");
  if (opt.trials) s["n_runs"] = *opt.trials;
  if (opt.horizon) s["horizon"] = *opt.horizon;
  SimConfig sc;
  sc.horizon = detail::setting<std::uint64_t>(s, "horizon", sc.horizon);
  sc.n_runs = detail::setting<std::uint64_t>(s, "n_runs", sc.n_runs);
  sc.start_patch = detail::setting<std::size_t>(s, "start_patch", sc.start_patch);
  sc.initial = detail::setting<Count>(s, "initial", sc.initial);
  sc.escape_cap = detail::setting<double>(s, "escape_cap", sc.escape_cap);
  sc.lineage_slots = detail::setting<std::size_t>(s, "lineage_slots", sc.lineage_slots);
  sc.seed = seed;
  sc.threads = opt.threads;
  const bool allow = detail::setting<bool>(s, "allow_degenerate", false);
  if (!s.contains("laws")) s["laws"] = "poisson";
  const EnvironmentModel* envp = env ? &*env : nullptr;
  const LawTable laws = parse_laws(s["laws"], g, envp, allow);

  const SimReport rep = simulate(g, envp, laws, sc);
  OJson results;
  results["simulation"] = sim_report_json(rep);
  const auto rho = detail::reference_growth(g, envp);
  if (rho) results["reference_rho"] = *rho;

  OJson checks = OJson::array();
  if (rho && rep.growth_rate_hat && *rho > 1.0)
    checks.push_back(detail::delta("log_rho", "spectral", "simulation", std::abs(std::log(*rho) - *rep.growth_rate_hat)));
  if (!env && rep.occupancy_hat && rho && *rho > 1.0) {
    try {
      const SpectralData sd = growth_rate(g);
      if (!sd.periodic)
        checks.push_back(detail::delta("phi", "spectral", "simulation", distance_inf(occupancy_spectral(sd), *rep.occupancy_hat)));
    } catch (const ValidationError&) {
    }
  }
  if (s.contains("extinction")) {
    Json& ex = s["extinction"];
    const std::size_t home = detail::setting<std::size_t>(ex, "home", 0);
    SimConfig ec = sc;
    ec.initial = detail::setting<Count>(ex, "initial", 1);
    const auto est = extinction_probability(g, envp, laws, home, ec);
    OJson j;
    j["probability"] = est.probability;
    j["ci"] = est.ci_halfwidth;
    j["undecided"] = est.undecided;
    results["extinction"] = std::move(j);
  }

  if (rho && *rho > 1.0 && rep.n_survived == 0)
    throw StatisticalError("no run survived although rho > 1; increase --trials");

  OJson report = detail::envelope("simulate", cfg, seed);
  report["results"] = std::move(results);
  report["cross_checks"] = std::move(checks);

  std::vector<std::string> header{"n"};
  for (std::size_t j = 0; j < g.size(); ++j) header.push_back("Z_" + std::to_string(j + 1));
  std::vector<std::vector<double>> rows;
  const auto series = simulate_series(g, envp, laws, sc, 0);
  for (std::size_t n = 0; n < series.size(); ++n) {
    std::vector<double> r{static_cast<double>(n)};
    r.insert(r.end(), series[n].begin(), series[n].end());
    rows.push_back(std::move(r));
  }
  return {std::move(report), csv(header, rows)};
}

/// Two-state periodic environment: product matrix, both phase orders of the
/// even-return functional, the edge-chain variational formula, and the
/// two-patch closed form when K = 2. CSV is the edge occupancy.
inline CommandOutput cmd_periodic(Json cfg, const CliOptions& opt) {
  const std::uint64_t seed = detail::resolve_seed(cfg, opt);
  const MetapopGraph g = detail::resolve_model(cfg);
  const auto env = resolve_env(cfg);
  if (!env || !env->is_periodic()) throw ValidationError("periodic needs an \"env\" with a periodic schedule");
  const auto [e1, e2] = detail::two_phase(*env);
  Json& mcs = detail::section(cfg, "mc");
  const bool run_mc = detail::setting<bool>(mcs, "enabled", opt.trials.has_value()) || opt.trials.has_value();
  mcs["enabled"] = run_mc;
  const WalkConfig wc = detail::walk_config(cfg, opt, seed);

  OJson results, checks = OJson::array();
  const MeanMatrix prod = periodic_mean_matrix(g, *env);
  const SpectralData sd = growth_rate(prod);
  {
    OJson j;
    j["product"] = matrix_json(prod.a);
    j["rho_product"] = sd.rho;
    j["rho_per_step"] = std::sqrt(sd.rho);
    results["spectral"] = std::move(j);
  }
  {
    OJson per_state = OJson::array();
    for (std::size_t w : {e1, e2}) {
      OJson j;
      j["state"] = env->states()[w];
      try {
        j["rho"] = growth_rate(g.with_means(env->means(w))).rho;
      } catch (const ValidationError& e) {
        j["rho"] = detail::skipped(e);
      }
      per_state.push_back(std::move(j));
    }
    results["single_environment"] = std::move(per_state);
    Vector geo(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) geo[i] = std::sqrt(env->means(e1)[i] * env->means(e2)[i]);
    results["time_averaged_means"] = vec_json(geo);
  }

  const PhasedVerdicts even = even_return_functional(g, *env, wc.start_patch);
  {
    OJson j;
    j[env->states()[e1] + "_first"] = verdict_json(even.first);
    j[env->states()[e2] + "_first"] = verdict_json(even.second);
    results["even-return-exact"] = std::move(j);
  }
  checks.push_back(detail::agreement("persists", "spectral", "even-return-exact", (sd.rho > 1.0) == even.first.persists));
  if (run_mc) {
    const PhasedVerdicts mc = even_return_functional_mc(g, *env, wc.start_patch, wc);
    OJson j;
    j[env->states()[e1] + "_first"] = verdict_json(mc.first);
    j[env->states()[e2] + "_first"] = verdict_json(mc.second);
    results["even-return-monte-carlo"] = std::move(j);
  }

  if (g.size() == 2) {
    const double M1 = env->means(e1)[0], M2 = env->means(e2)[0], m1 = env->means(e1)[1], m2 = env->means(e2)[1];
    const auto sides = two_patch_periodic_sides(M1, M2, m1, m2, g.d(0, 1), g.d(1, 0));
    const PersistenceVerdict v = two_patch_periodic_criterion(M1, M2, m1, m2, g.d(0, 1), g.d(1, 0));
    OJson j = verdict_json(v);
    j["lhs"] = sides.lhs;
    j["rhs"] = sides.rhs;
    results["two-patch-criterion"] = std::move(j);
    checks.push_back(detail::agreement("persists", "spectral", "two-patch-criterion", (sd.rho > 1.0) == v.persists));
  }

  std::string table;
  try {
    const PeriodicGrowth pg = periodic_growth_and_occupancy(g, *env);
    OJson j;
    j["two_log_rho"] = pg.two_log_rho;
    j["rho_per_step"] = std::exp(0.5 * pg.two_log_rho);
    OJson edges = OJson::array();
    std::vector<std::vector<double>> rows;
    for (std::size_t e = 0; e < pg.edges.size(); ++e) {
      edges.push_back({pg.edges[e].first, pg.edges[e].second, pg.edge.phi[e]});
      rows.push_back({static_cast<double>(pg.edges[e].first), static_cast<double>(pg.edges[e].second), pg.edge.phi[e]});
    }
    j["edge_phi"] = std::move(edges);
    j["first_marginal"] = vec_json(pg.first_marginal);
    j["second_marginal"] = vec_json(pg.second_marginal);
    results["edge-chain"] = std::move(j);
    checks.push_back(detail::delta("log_rho_product", "spectral", "edge-chain", std::abs(pg.log_rho_product - pg.two_log_rho)));
    table = csv({"i", "j", "phi"}, rows);
  } catch (const ValidationError& e) {
    results["edge-chain"] = detail::skipped(e);
  }
  if (const auto delta = fully_mixing_profile(g.dispersal())) {
    const double closed = fully_mixing_periodic_growth(*delta, env->means(e1), env->means(e2));
    results["fully-mixing"] = OJson{{"rho_per_step", closed}};
    checks.push_back(detail::delta("rho_per_step", "spectral", "fully-mixing", std::abs(std::sqrt(sd.rho) - closed)));
  }

  OJson verdict;
  verdict["rho_product"] = sd.rho;
  verdict["persists"] = sd.rho > 1.0;
  OJson rep = detail::envelope("periodic", cfg, seed);
  rep["results"] = std::move(results);
  rep["cross_checks"] = std::move(checks);
  rep["verdict"] = std::move(verdict);
  return {std::move(rep), std::move(table)};
}

/// Markov environment: Lyapunov exponent with CI, and the closed-form lower
/// bound when the model is two patches and two states.
inline CommandOutput cmd_randenv(Json cfg, const CliOptions& opt) {
  const std::uint64_t seed = detail::resolve_seed(cfg, opt);
  const MetapopGraph g = detail::resolve_model(cfg);
  const auto env = resolve_env(cfg);
  if (!env) throw ValidationError("randenv needs an \"env\"");
  Json& ls = detail::section(cfg, "lyapunov");
  if (opt.trials) ls["n_steps"] = *opt.trials;
  LyapunovConfig lc;
  lc.n_steps = detail::setting<std::uint64_t>(ls, "n_steps", lc.n_steps);
  lc.burn_in = detail::setting<std::uint64_t>(ls, "burn_in", lc.burn_in);
  lc.batches = detail::setting<std::size_t>(ls, "batches", lc.batches);
  lc.seed = seed;
  lc.threads = opt.threads;

  OJson results, checks = OJson::array();
  const LyapunovEstimate est = lyapunov_estimate(g, *env, lc);
  {
    OJson j;
    j["gamma"] = est.gamma;
    j["ci"] = est.ci_halfwidth;
    j["n_steps"] = est.n_steps;
    j["seed"] = est.seed;
    results["lyapunov"] = std::move(j);
  }
  OJson per_state = OJson::array();
  for (std::size_t w = 0; w < env->num_states(); ++w) {
    OJson j;
    j["state"] = env->states()[w];
    try {
      j["log_rho"] = std::log(growth_rate(g.with_means(env->means(w))).rho);
    } catch (const ValidationError& e) {
      j["log_rho"] = detail::skipped(e);
    }
    per_state.push_back(std::move(j));
  }
  results["single_environment"] = std::move(per_state);

  std::optional<double> bound;
  if (g.size() == 2 && env->num_states() == 2 && !env->is_periodic()) {
    const Matrix& t = env->markov().transition;
    bound = random_env_lower_bound(env->means(0)[0], env->means(1)[1], g.d(0, 1), g.d(1, 0), t(0, 1), t(1, 0));
    results["lower_bound"] = *bound;
    checks.push_back(detail::agreement("bound <= gamma + ci", "lower_bound", "lyapunov", *bound <= est.gamma + est.ci_halfwidth));
  }

  OJson verdict;
  verdict["gamma"] = est.gamma;
  verdict["persists"] = est.gamma > 0.0;
  verdict["decided"] = std::abs(est.gamma) > est.ci_halfwidth;
  OJson rep = detail::envelope("randenv", cfg, seed);
  rep["results"] = std::move(results);
  rep["cross_checks"] = std::move(checks);
  rep["verdict"] = std::move(verdict);
  return {std::move(rep), csv({"gamma", "ci", "lower_bound"},
                              {{est.gamma, est.ci_halfwidth, bound.value_or(std::nan(""))}})};
}

/// Pipeline motif: closed-form depleting rate against the linear system on
/// the collapsed motif, and the persistence verdict.
inline CommandOutput cmd_pipeline(Json cfg, const CliOptions& opt) {
  const std::uint64_t seed = detail::resolve_seed(cfg, opt);
  if (!cfg.contains("pipeline")) throw ValidationError("pipeline needs a \"pipeline\" model");
  const PipelineSpec ps = parse_pipeline(cfg.at("pipeline"));
  const Motif motif = pipeline_to_motif(ps);
  const MetapopGraph g = collapse(motif);

  OJson results, checks = OJson::array();
  const PipelineRate pr = pipeline_depleting_rate(ps);
  const double e_lin = pipeline_depleting_rate_linear(ps);
  const double crit = ps.M * (1.0 - ps.p) + pr.e * ps.M * ps.p;
  {
    OJson j;
    j["lambda"] = pr.lambda;
    j["mu"] = pr.mu;
    j["e"] = pr.e;
    j["product_residual"] = pr.product_residual;
    j["sum_residual"] = pr.sum_residual;
    j["criterion"] = crit;
    results["closed-form"] = std::move(j);
  }
  results["linear-system"] = OJson{{"e", e_lin}};
  const PersistenceVerdict tr = type_return_functional(motif);
  results["type-return"] = verdict_json(tr);
  const SpectralData sd = growth_rate(g);
  results["spectral"] = OJson{{"rho", sd.rho}};
  results["motif"] = graph_json(g);
  checks.push_back(detail::delta("e", "closed-form", "linear-system", std::abs(pr.e - e_lin)));
  checks.push_back(detail::delta("R", "closed-form", "type-return", std::abs(crit - tr.R_value)));
  checks.push_back(detail::agreement("persists", "spectral", "type-return", (sd.rho > 1.0) == tr.persists));

  OJson verdict = verdict_json(PersistenceVerdict::from_value(crit, VerdictMethod::closed_form));
  OJson rep = detail::envelope("pipeline", cfg, seed);
  rep["results"] = std::move(results);
  rep["cross_checks"] = std::move(checks);
  rep["verdict"] = std::move(verdict);
  return {std::move(rep), csv({"lambda", "mu", "e", "criterion", "rho"}, {{pr.lambda, pr.mu, pr.e, crit, sd.rho}})};
}

/// Parses the model (and environment) and reports positivity, irreducibility
/// and aperiodicity. Throws a ValidationError, i.e. exit code 2, when a mean
/// is zero or the graph is reducible.
inline CommandOutput cmd_validate(Json cfg, const CliOptions& opt) {
  const std::uint64_t seed = detail::resolve_seed(cfg, opt);
  const MetapopGraph g = detail::resolve_model(cfg);
  const auto env = resolve_env(cfg);
  if (env) detail::require_matching(g, *env);
  const AssumptionReport a = validate_graph(g);
  OJson results;
  results["patches"] = g.size();
  results["assumptions"] = detail::assumptions_json(a);
  if (env) results["environment_states"] = env->num_states();
  OJson rep = detail::envelope("validate", cfg, seed);
  rep["results"] = std::move(results);
  if (!a.irreducible) throw ValidationError("dispersal graph is not irreducible");
  if (!a.positive_means) throw ValidationError("some patch has mean 0; means must be positive");
  return {std::move(rep), {}};
}

inline CommandOutput run_command(const std::string& name, Json cfg, const CliOptions& opt) {
  if (name == "analyze") return cmd_analyze(std::move(cfg), opt);
  if (name == "simulate") return cmd_simulate(std::move(cfg), opt);
  if (name == "periodic") return cmd_periodic(std::move(cfg), opt);
  if (name == "randenv") return cmd_randenv(std::move(cfg), opt);
  if (name == "pipeline") return cmd_pipeline(std::move(cfg), opt);
  if (name == "validate") return cmd_validate(std::move(cfg), opt);
  throw ValidationError("unknown command " + name);
}

/// 0 ok, 2 validation, 3 non-convergence, 4 statistical failure.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e)) return 2;
  if (dynamic_cast<const ConvergenceError*>(&e)) return 3;
  if (dynamic_cast<const StatisticalError*>(&e)) return 4;
  if (dynamic_cast<const Json::exception*>(&e)) return 2;
  return 1;
}

}  // namespace metapop

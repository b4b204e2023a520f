// Acceptance run: one PASS/FAIL line per criterion, with the measured
// numbers. Exit status is 0 once every criterion has been evaluated; with
// --strict it is 1 if any criterion failed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "metapop/cli.hpp"
#include "metapop/metapop.hpp"
#include "oracles.hpp"

using namespace metapop;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Instance {
  MetapopGraph g;
  std::size_t k;
};

std::vector<Instance> random_instances(std::uint64_t seed, int count) {
  oracle::Gen gen(seed);
  std::vector<Instance> out;
  for (int t = 0; t < count; ++t) {
    const std::size_t k = gen.integer(2, 6);
    const Vector m = gen.means(k, 0.05, 3.0);
    out.push_back({MetapopGraph(m, gen.dispersal(k)), k});
  }
  return out;
}

Matrix two_patch_d(double p, double q) { return Matrix::from_rows({{1.0 - p, p}, {q, 1.0 - q}}); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1
Verdict cross_method() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_s = 0.0, worst_t = 0.0;
  for (const auto& in : random_instances(1, 200)) {
    const double lr = std::log(growth_rate(in.g).rho);
    worst_s = std::max(worst_s, std::abs(lr - max_rate_gap(in.g).log_rho));
    worst_t = std::max(worst_t, std::abs(lr - argmax_occupancy(in.g).log_rho));
  }
  const double secs = seconds_since(t0);
  return {worst_s <= 1e-6 && worst_t <= 1e-8 && secs <= 60.0,
          fmt("max|simplex-spectral|=%.2e (<=1e-6), max|twisted-spectral|=%.2e (<=1e-8), %.1fs (<=60s)", worst_s,
              worst_t, secs)};
}

// 2
Verdict persistence_equivalence() {
  int agree = 0, total = 0, flagged = 0;
  for (const auto& in : random_instances(1, 200)) {
    const double rho = growth_rate(in.g).rho;
    const auto v = return_functional_exact(in.g, 0);
    if (v.critical || std::abs(rho - 1.0) <= kCriticalBand) {
      ++flagged;
      continue;
    }
    ++total;
    agree += v.persists == (rho > 1.0);
  }
  return {agree == total, fmt("%d/%d agree, %d in the critical band", agree, total, flagged)};
}

// 3
Verdict two_habitat() {
  oracle::Gen gen(3);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = gen.integer(2, 6);
    Vector m(k, gen.uniform(0.05, 1.0));
    m[0] = gen.uniform(1.0, 3.0);
    const MetapopGraph g(m, gen.dispersal(k));
    worst = std::max(worst, std::abs(two_habitat_criterion(g) - return_functional_exact(g, 0).R_value));
  }
  double worst_e = 0.0;
  for (int t = 0; t < 100; ++t) {
    const double m = gen.uniform(0.05, 1.0), p = gen.uniform(0.01, 0.99), q = gen.uniform(0.01, 0.99);
    const MetapopGraph g({2.0, m}, two_patch_d(p, q));
    worst_e = std::max(worst_e, std::abs(depleting_rate(g) - two_patch_depleting_rate(m, q)));
  }
  return {worst <= 1e-10 && worst_e <= 1e-13,
          fmt("max|M(1-p)+eMp - R_exact|=%.2e (<=1e-10), two-patch e max diff %.2e", worst, worst_e)};
}

PipelineSpec draw_pipeline(oracle::Gen& gen, std::size_t n) {
  PipelineSpec ps;
  ps.n = n;
  ps.p = gen.uniform(0.05, 1.0);
  ps.L = gen.uniform(0.0, 1.0);
  ps.s = gen.uniform(0.0, 0.6);
  ps.l = gen.uniform(0.05, 0.95) * (1.0 - ps.s);
  ps.m = gen.uniform(0.05, 0.95);
  ps.M = gen.uniform(1.0, 4.0);
  return ps;
}

// 4
Verdict pipeline() {
  oracle::Gen gen(4);
  double worst = 0.0, prod = 0.0, sum = 0.0, red1 = 0.0, iso = 0.0;
  for (std::size_t n = 1; n <= 10; ++n)
    for (int t = 0; t < 100; ++t) {
      PipelineSpec ps = draw_pipeline(gen, n);
      const auto r = pipeline_depleting_rate(ps);
      worst = std::max(worst, std::abs(r.e - pipeline_depleting_rate_linear(ps)));
      prod = std::max(prod, r.product_residual);
      sum = std::max(sum, r.sum_residual);
      if (n == 1) red1 = std::max(red1, std::abs(r.e - (1 - ps.s) * ps.m / (1 - ps.m * ps.s)));
      ps.l = 0.5 * (1 - ps.s);
      const auto ri = pipeline_depleting_rate(ps);
      const double nn = static_cast<double>(n), lam = ri.lambda, mu = ri.mu;
      const double closed =
          (std::pow(lam, nn) - std::pow(mu, nn) + lam - mu) / (std::pow(lam, nn + 1) - std::pow(mu, nn + 1));
      iso = std::max(iso, std::abs(ri.e - closed));
    }
  return {worst <= 1e-10 && prod <= 1e-12 && sum <= 1e-12 && red1 <= 1e-12 && iso <= 1e-12,
          fmt("closed vs linear %.2e, |lambda mu - l/r| %.2e, |lambda+mu - (1-ms)/(mr)| %.2e, n=1 %.2e, isotropic %.2e",
              worst, prod, sum, red1, iso)};
}

// 5
Verdict fully_mixing() {
  oracle::Gen gen(5);
  double w_rho = 0.0, w_I = 0.0, w_phi = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = gen.integer(2, 6);
    const Vector delta = gen.simplex_point(k);
    const Vector m = gen.means(k, 0.05, 3.0);
    const MetapopGraph g(m, gen.fully_mixing(delta));
    const auto sd = growth_rate(g);
    w_rho = std::max(w_rho, std::abs(sd.rho - fully_mixing_growth(delta, m)));
    const Vector f = gen.simplex_point(k);
    const auto ev = rate_function(g.dispersal(), OccupancyVector::normalized(f));
    w_I = std::max(w_I, std::abs(ev.I_value - fully_mixing_rate(delta, f)));
    const Vector phi = fully_mixing_occupancy(delta, m);
    w_phi = std::max(w_phi, distance_inf(argmax_occupancy(g).phi.values(), phi));
    w_phi = std::max(w_phi, distance_inf(occupancy_spectral(sd).values(), phi));
  }
  return {w_rho <= 1e-10 && w_I <= 1e-10 && w_phi <= 1e-10,
          fmt("rho %.2e, I=KL %.2e, phi %.2e (all <=1e-10)", w_rho, w_I, w_phi)};
}

// 6
Verdict occupancy_vs_stationary() {
  double min_gap = 1e300;
  for (const auto& in : random_instances(6, 100)) {
    const auto u = stationary_distribution(in.g);
    min_gap = std::min(min_gap, distance_inf(argmax_occupancy(in.g).phi.values(), u.values()));
  }
  oracle::Gen gen(66);
  double max_eq = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = gen.integer(2, 6);
    const MetapopGraph g(Vector(k, gen.uniform(0.05, 3.0)), gen.dispersal(k));
    const auto u = stationary_distribution(g);
    max_eq = std::max(max_eq, distance_inf(argmax_occupancy(g).phi.values(), u.values()));
    max_eq = std::max(max_eq, distance_inf(occupancy_spectral(growth_rate(g)).values(), u.values()));
  }
  return {min_gap > 1e-6 && max_eq <= 1e-9,
          fmt("non-constant m: min|phi-u|=%.2e (>1e-6); constant m: max|phi-u|=%.2e (<=1e-9)", min_gap, max_eq)};
}

// 7
Verdict periodic() {
  oracle::Gen gen(7);
  int agree = 0, total = 0;
  for (int t = 0; t < 500; ++t) {
    const double M1 = gen.uniform(0.05, 4), M2 = gen.uniform(0.05, 4), m1 = gen.uniform(0.05, 2),
                 m2 = gen.uniform(0.05, 2), p = gen.uniform(0, 1), q = gen.uniform(0, 1);
    const auto c = two_patch_periodic_criterion(M1, M2, m1, m2, p, q);
    const MetapopGraph g({1.0, 1.0}, two_patch_d(p, q));
    const EnvironmentModel env({"e1", "e2"}, {{M1, m1}, {M2, m2}}, PeriodicSchedule{{0, 1}});
    const double rho = growth_rate(periodic_mean_matrix(g, env)).rho;
    if (c.critical) continue;
    ++total;
    agree += c.persists == (rho > 1.0);
  }

  const MetapopGraph cs({1.0, 1.0}, two_patch_d(0.5, 0.5));
  const EnvironmentModel cs_env({"e1", "e2"}, {{4.0, 0.9}, {0.2, 0.9}}, PeriodicSchedule{{0, 1}});
  const bool coupled = two_patch_periodic_criterion(4.0, 0.2, 0.9, 0.9, 0.5, 0.5).persists &&
                       growth_rate(periodic_mean_matrix(cs, cs_env)).rho > 1.0 && 4.0 * 0.2 <= 1.0 && 0.9 * 0.9 <= 1.0;

  double w_fm = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = gen.integer(2, 5);
    const Vector delta = gen.simplex_point(k);
    const Vector e1 = gen.means(k, 0.05, 3.0), e2 = gen.means(k, 0.05, 3.0);
    const MetapopGraph g(Vector(k, 1.0), gen.fully_mixing(delta));
    const EnvironmentModel env({"e1", "e2"}, {e1, e2}, PeriodicSchedule{{0, 1}});
    const double geo = std::sqrt(fully_mixing_growth(delta, e1) * fully_mixing_growth(delta, e2));
    w_fm = std::max(w_fm, std::abs(periodic_growth_rate(g, env) - geo));
    w_fm = std::max(w_fm, std::abs(fully_mixing_periodic_growth(delta, e1, e2) - geo));
  }

  // Edge chain: both optimisers, the coupled-sinks instance plus random ones.
  double w_edge = 0.0;
  auto edge_check = [&](const MetapopGraph& g, const EnvironmentModel& env) {
    for (auto method : {VariationalMethod::twisted_eigen, VariationalMethod::simplex_optimize}) {
      const auto pg = periodic_growth_and_occupancy(g, env, method);
      w_edge = std::max(w_edge, std::abs(0.5 * pg.two_log_rho - 0.5 * pg.log_rho_product));
    }
  };
  edge_check(cs, cs_env);
  for (int t = 0; t < 30; ++t) {
    const std::size_t k = gen.integer(2, 4);
    const MetapopGraph g(Vector(k, 1.0), gen.dispersal(k, 0.2));
    edge_check(g, EnvironmentModel({"e1", "e2"}, {gen.means(k, 0.05, 3.0), gen.means(k, 0.05, 3.0)},
                                   PeriodicSchedule{{0, 1}}));
  }
  return {agree == total && coupled && w_fm <= 1e-10 && w_edge <= 1e-6,
          fmt("criterion vs rho(A(e1)A(e2)): %d/%d; coupled sinks persists: %s; fully mixing %.2e; edge chain %.2e", agree,
              total, coupled ? "yes" : "no", w_fm, w_edge)};
}

// 8
Verdict random_env() {
  oracle::Gen gen(8);
  LyapunovConfig cfg;
  cfg.n_steps = 1'000'000;
  int in_const = 0, in_alt = 0;
  for (int t = 0; t < 20; ++t) {
    cfg.seed = 100 + t;
    const std::size_t k = gen.integer(2, 4);
    const Matrix d = gen.dispersal(k);
    const Vector m = gen.means(k, 0.05, 3.0);
    const MetapopGraph g(Vector(k, 1.0), d);
    const auto c = lyapunov_estimate(g, EnvironmentModel::constant(m), cfg);
    in_const += std::abs(c.gamma - std::log(growth_rate(g.with_means(m)).rho)) <= c.ci_halfwidth;

    const Vector e2 = gen.means(k, 0.05, 3.0);
    const EnvironmentModel alt({"e1", "e2"}, {m, e2}, MarkovSchedule::two_state(1.0, 1.0));
    const EnvironmentModel per({"e1", "e2"}, {m, e2}, PeriodicSchedule{{0, 1}});
    const auto a = lyapunov_estimate(g, alt, cfg);
    in_alt += std::abs(a.gamma - 0.5 * std::log(growth_rate(periodic_mean_matrix(g, per)).rho)) <= a.ci_halfwidth;
  }

  int bound_ok = 0;
  cfg.n_steps = 200'000;
  for (int t = 0; t < 100; ++t) {
    cfg.seed = 1000 + t;
    const double M1 = gen.uniform(0.05, 10), M2 = gen.uniform(0.05, 3), m1 = gen.uniform(0.05, 3),
                 m2 = gen.uniform(0.05, 3), p = gen.uniform(0.01, 0.99), q = gen.uniform(0.01, 0.99),
                 alpha = gen.uniform(0.05, 0.95), beta = gen.uniform(0.05, 0.95);
    const MetapopGraph g({1.0, 1.0}, two_patch_d(p, q));
    const EnvironmentModel env({"e1", "e2"}, {{M1, m1}, {M2, m2}}, MarkovSchedule::two_state(alpha, beta));
    const auto est = lyapunov_estimate(g, env, cfg);
    bound_ok += random_env_lower_bound(M1, m2, p, q, alpha, beta) <= est.gamma + est.ci_halfwidth;
  }

  // Each patch is a sink on its own (log-average growth below 0), the bound is positive.
  cfg.n_steps = 1'000'000;
  cfg.seed = 1;
  const MetapopGraph g({1.0, 1.0}, two_patch_d(0.5, 0.5));
  const EnvironmentModel env({"e1", "e2"}, {{10.0, 0.8}, {0.05, 0.8}}, MarkovSchedule::two_state(0.5, 0.5));
  const double bound = random_env_lower_bound(10.0, 0.8, 0.5, 0.5, 0.5, 0.5);
  const auto est = lyapunov_estimate(g, env, cfg);
  const bool sinks = 0.5 * std::log(10.0) + 0.5 * std::log(0.05) < 0.0 && 0.8 < 1.0;
  const bool coupled = sinks && bound > 0.0 && est.gamma - est.ci_halfwidth > 0.0;

  return {in_const == 20 && in_alt == 20 && bound_ok == 100 && coupled,
          fmt("constant %d/20, alternating %d/20 within CI; bound <= gamma+CI %d/100; coupled sinks gamma=%.4f+-%.4f, "
              "bound=%.5f",
              in_const, in_alt, bound_ok, est.gamma, est.ci_halfwidth, bound)};
}

// 9
Verdict simulation() {
  const auto t0 = std::chrono::steady_clock::now();
  const MetapopGraph g({2.0, 0.5}, two_patch_d(0.5, 0.5));
  SimConfig cfg;
  cfg.horizon = 200;
  cfg.n_runs = 10'000;
  cfg.seed = 1;
  const auto rep = simulate(g, cfg);
  const double lr = std::log(1.25);
  const bool growth = rep.growth_rate_hat && std::abs(*rep.growth_rate_hat - lr) <= *rep.growth_rate_ci;
  bool occ = rep.occupancy_hat.has_value();
  const double target[2] = {0.8, 0.2};
  if (occ)
    for (std::size_t i = 0; i < 2; ++i) occ = occ && std::abs((*rep.occupancy_hat)[i] - target[i]) <= (*rep.occupancy_ci)[i];

  const MetapopGraph sub({1.1, 0.1}, two_patch_d(0.9, 0.9));
  SimConfig sc = cfg;
  sc.horizon = 500;
  const auto srep = simulate(sub, sc);
  const bool dies = srep.survival_prob <= 0.01;
  const double secs = seconds_since(t0);
  return {growth && occ && dies && secs <= 300.0,
          fmt("growth %.6f+-%.6f vs %.6f [%s]; occupancy (%.5f+-%.5f, %.5f+-%.5f) vs (0.8, 0.2) [%s]; subcritical "
              "survival %.4f [%s]; %.1fs",
              rep.growth_rate_hat.value_or(NAN), rep.growth_rate_ci.value_or(NAN), lr, growth ? "ok" : "miss",
              rep.occupancy_hat ? (*rep.occupancy_hat)[0] : NAN, rep.occupancy_ci ? (*rep.occupancy_ci)[0] : NAN,
              rep.occupancy_hat ? (*rep.occupancy_hat)[1] : NAN, rep.occupancy_ci ? (*rep.occupancy_ci)[1] : NAN,
              occ ? "ok" : "miss", srep.survival_prob, dies ? "ok" : "miss", secs)};
}

// 10
Verdict sanov() {
  const double a = 0.59, eps = 0.05;
  const int n = 50;
  const std::uint64_t walks = 1'000'000, seed = 1;
  const Matrix d = Matrix::from_rows({{1.0 - a, a}, {a, 1.0 - a}});
  const double fs[3] = {0.6, 0.7, 0.8};
  int lo[3], hi[3];
  for (int c = 0; c < 3; ++c) {
    lo[c] = static_cast<int>(std::ceil(n * (fs[c] - eps) - 1e-9));
    hi[c] = static_cast<int>(std::floor(n * (fs[c] + eps) + 1e-9));
  }
  std::uint64_t hits[3] = {0, 0, 0};
  for (std::uint64_t w = 0; w < walks; ++w) {
    Stream rng(seed, w);
    int x = rng.uniform() < 0.5 ? 0 : 1;  // stationary start
    int count = 0;
    for (int s = 0; s < n; ++s) {
      if (rng.uniform() < a) x = 1 - x;
      count += x == 0;
    }
    for (int c = 0; c < 3; ++c) hits[c] += count >= lo[c] && count <= hi[c];
  }
  bool pass = true;
  std::string detail;
  for (int c = 0; c < 3; ++c) {
    const double I = rate_function(d, OccupancyVector({fs[c], 1.0 - fs[c]})).I_value;
    const double est = hits[c] > 0 ? -std::log(static_cast<double>(hits[c]) / walks) / n : INFINITY;
    const double exact = -std::log(oracle::window_probability(a, n, lo[c], hi[c])) / n;
    const double rel = std::abs(est - I) / I;
    pass = pass && rel <= 0.15;
    detail += fmt("f=%.1f: I=%.5f, MC %.5f (%llu hits, rel %.3f), exact-window %.5f; ", fs[c], I, est,
                  static_cast<unsigned long long>(hits[c]), rel, exact);
  }
  return {pass, detail};
}

// 11
Verdict reproducibility() {
  struct Job {
    const char* cmd;
    const char* file;
    std::uint64_t trials;
  };
  const Job jobs[] = {{"analyze", "two_patch.json", 100'000},
                      {"simulate", "supercritical_sim.json", 2'000},
                      {"periodic", "coupled_sinks_periodic.json", 100'000},
                      {"randenv", "coupled_sinks_markov.json", 1'000'000}};
  int identical = 0, total = 0;
  for (const auto& job : jobs) {
    const Json cfg = read_json_file(std::string(METAPOP_SAMPLES_DIR) + "/" + job.file);
    std::string first;
    std::string first_csv;
    for (unsigned threads : {1u, 1u, 2u, 4u}) {
      CliOptions opt;
      opt.trials = job.trials;
      opt.threads = threads;
      const auto out = run_command(job.cmd, cfg, opt);
      const std::string s = dump(out.report);
      if (first.empty()) {
        first = s;
        first_csv = out.csv;
        continue;
      }
      ++total;
      identical += s == first && out.csv == first_csv;
    }
  }
  return {identical == total, fmt("%d/%d repeated reports byte-identical (threads 1,1,2,4)", identical, total)};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  for (int i = 1; i < argc; ++i) strict = strict || std::strcmp(argv[i], "--strict") == 0;
  std::setvbuf(stdout, nullptr, _IOLBF, 0);

  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"cross-method growth rate", cross_method},
      {"persistence equivalence", persistence_equivalence},
      {"two-habitat closed forms", two_habitat},
      {"pipeline closed form", pipeline},
      {"fully mixing oracles", fully_mixing},
      {"occupancy differs from stationary", occupancy_vs_stationary},
      {"periodic environment", periodic},
      {"random environment", random_env},
      {"simulation ground truth", simulation},
      {"Sanov desk check", sanov},
      {"reproducibility", reproducibility},
  };
  int passed = 0, idx = 0;
  for (const auto& [name, run] : criteria) {
    ++idx;
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    passed += v.pass;
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", idx, name, v.detail.c_str());
  }
  std::printf("%d/%d criteria passed\n", passed, idx);
  return strict && passed != idx ? 1 : 0;
}

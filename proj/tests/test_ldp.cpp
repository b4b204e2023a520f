#include <catch_amalgamated.hpp>

#include <cmath>

#include "metapop/ldp.hpp"
#include "metapop/spectral.hpp"
#include "oracles.hpp"

using namespace metapop;
using Catch::Matchers::WithinAbs;

namespace {

MetapopGraph benchmark() { return MetapopGraph({2.0, 0.5}, Matrix::from_rows({{0.5, 0.5}, {0.5, 0.5}})); }

}  // namespace

TEST_CASE("payoff", "[ldp]") {
  const auto g = benchmark();
  CHECK_THAT(payoff(g, OccupancyVector({0.8, 0.2})), WithinAbs(0.6 * std::log(2.0), 1e-15));
  const MetapopGraph ones({1.0, 1.0}, g.dispersal());
  CHECK(payoff(ones, OccupancyVector({0.3, 0.7})) == 0.0);
  CHECK_THAT(payoff(g, OccupancyVector({1.0, 0.0})), WithinAbs(std::log(2.0), 1e-15));
  // 0 log 0 = 0
  const MetapopGraph dead({2.0, 0.0}, g.dispersal());
  CHECK_THAT(payoff(dead, OccupancyVector({1.0, 0.0})), WithinAbs(std::log(2.0), 1e-15));
}

TEST_CASE("rate function vanishes at the stationary law", "[ldp]") {
  const Matrix d = Matrix::from_rows({{0.9, 0.1}, {0.3, 0.7}});
  const auto ev = rate_function(d, OccupancyVector({0.75, 0.25}));
  CHECK_THAT(ev.I_value, WithinAbs(0.0, 1e-14));
  CHECK_THAT(ev.v_star[0] / ev.v_star[1], WithinAbs(3.0, 1e-8));
}

TEST_CASE("rate function of fully mixing chains is a KL divergence", "[ldp]") {
  const Matrix d = Matrix::from_rows({{0.5, 0.5}, {0.5, 0.5}});
  const auto ev = rate_function(d, OccupancyVector({0.8, 0.2}));
  const double kl = 0.8 * std::log(1.6) + 0.2 * std::log(0.4);
  CHECK_THAT(ev.I_value, WithinAbs(kl, 1e-12));
  CHECK_THAT(kl, WithinAbs(0.192745, 1e-6));

  const auto corner = rate_function(d, OccupancyVector({1.0, 0.0}));
  CHECK_THAT(corner.I_value, WithinAbs(std::log(2.0), 1e-12));
  CHECK(corner.boundary);

  oracle::Gen gen(4);
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = gen.integer(2, 6);
    const Vector delta = gen.simplex_point(k);
    const Vector f = gen.simplex_point(k);
    const auto r = rate_function(gen.fully_mixing(delta), OccupancyVector::normalized(f));
    CHECK_THAT(r.I_value, WithinAbs(fully_mixing_rate(delta, f), 1e-10));
  }
}

TEST_CASE("rate function of a two-state chain matches its Legendre dual", "[ldp]") {
  oracle::Gen gen(17);
  for (int t = 0; t < 100; ++t) {
    const double a = gen.uniform(0.02, 0.98), b = gen.uniform(0.02, 0.98);
    const Matrix d = Matrix::from_rows({{1.0 - a, a}, {b, 1.0 - b}});
    const double f1 = gen.uniform(0.01, 0.99);
    const auto ev = rate_function(d, OccupancyVector({f1, 1.0 - f1}));
    CHECK_THAT(ev.I_value, WithinAbs(oracle::rate_dual_2(d, f1), 1e-9));
  }
}

TEST_CASE("rate function is infinite off the reachable support", "[ldp]") {
  // A chain that cannot stay at patch 0 cannot spend all its time there.
  const Matrix d = Matrix::from_rows({{0.0, 1.0}, {0.5, 0.5}});
  const auto ev = rate_function(d, OccupancyVector({1.0, 0.0}));
  CHECK(std::isinf(ev.I_value));
  CHECK_FALSE(ev.attained);
  CHECK_THROWS_AS(rate_function(Matrix::identity(2), OccupancyVector({0.5, 0.5})), ValidationError);
}

TEST_CASE("variational formula on the benchmark", "[ldp]") {
  const auto g = benchmark();
  for (const auto& res : {max_rate_gap(g), argmax_occupancy(g)}) {
    CHECK_THAT(res.log_rho, WithinAbs(std::log(1.25), 1e-9));
    CHECK_THAT(res.phi[0], WithinAbs(0.8, 1e-7));
    CHECK_THAT(res.R_value - res.I_value, WithinAbs(res.log_rho, 1e-9));
  }
  CHECK(max_rate_gap(g).method == VariationalMethod::simplex_optimize);
}

TEST_CASE("equal means give the stationary law", "[ldp]") {
  const Matrix d = Matrix::from_rows({{0.2, 0.3, 0.5}, {0.1, 0.1, 0.8}, {0.6, 0.2, 0.2}});
  const auto u = stationary_distribution(d);
  for (double c : {1.0, 1.7}) {
    const MetapopGraph g({c, c, c}, d);
    const auto s = max_rate_gap(g);
    const auto t = argmax_occupancy(g);
    CHECK_THAT(s.log_rho, WithinAbs(std::log(c), 1e-9));
    CHECK_THAT(t.log_rho, WithinAbs(std::log(c), 1e-12));
    CHECK(distance_inf(s.phi.values(), u.values()) < 1e-7);
    CHECK(distance_inf(t.phi.values(), u.values()) < 1e-10);
  }
}

TEST_CASE("fully mixing occupancy", "[ldp]") {
  oracle::Gen gen(6);
  for (int t = 0; t < 30; ++t) {
    const std::size_t k = gen.integer(2, 5);
    const Vector delta = gen.simplex_point(k);
    const Vector m = gen.means(k, 0.05, 3.0);
    const MetapopGraph g(m, gen.fully_mixing(delta));
    const auto res = argmax_occupancy(g);
    CHECK(distance_inf(res.phi.values(), fully_mixing_occupancy(delta, m)) < 1e-10);
    CHECK_THAT(res.log_rho, WithinAbs(std::log(fully_mixing_growth(delta, m)), 1e-10));
  }
}

TEST_CASE("both variational routes agree with the dense eigensolver", "[ldp]") {
  oracle::Gen gen(31);
  for (int t = 0; t < 60; ++t) {
    const std::size_t k = gen.integer(2, 6);
    const MetapopGraph g(gen.means(k, 0.05, 3.0), gen.dispersal(k));
    const Matrix a = oracle::mean_matrix(g.means(), g.dispersal());
    const double log_rho = std::log(oracle::spectral_radius(a));
    const auto s = max_rate_gap(g);
    const auto tw = argmax_occupancy(g);
    CHECK_THAT(s.log_rho, WithinAbs(log_rho, 1e-6));
    CHECK_THAT(tw.log_rho, WithinAbs(log_rho, 1e-8));

    // phi proportional to left * right from Eigen.
    const Vector l = oracle::left_vector(a), r = oracle::right_vector(a);
    Vector phi(k);
    for (std::size_t i = 0; i < k; ++i) phi[i] = l[i] * r[i];
    normalize_sum(phi);
    CHECK(distance_inf(tw.phi.values(), phi) < 1e-8);
    CHECK(distance_inf(s.phi.values(), phi) < 1e-5);
  }
}

TEST_CASE("occupancy differs from the stationary law when means differ", "[ldp]") {
  oracle::Gen gen(12);
  for (int t = 0; t < 40; ++t) {
    const std::size_t k = gen.integer(2, 6);
    const MetapopGraph g(gen.means(k, 0.05, 3.0), gen.dispersal(k));
    const auto u = stationary_distribution(g);
    CHECK(distance_inf(argmax_occupancy(g).phi.values(), u.values()) > 1e-6);
  }
}

TEST_CASE("assumptions are enforced", "[ldp]") {
  CHECK_THROWS_AS(max_rate_gap(MetapopGraph({2.0, 0.5}, Matrix::from_rows({{0.0, 1.0}, {1.0, 0.0}}))),
                  ValidationError);
  CHECK_THROWS_AS(argmax_occupancy(MetapopGraph({0.0, 0.5}, Matrix::from_rows({{0.5, 0.5}, {0.5, 0.5}}))),
                  ValidationError);
}

TEST_CASE("landscape grid on two patches", "[ldp]") {
  const auto grid = landscape_grid(benchmark());
  REQUIRE(grid.size() == 99);
  double best = -1e300, at = 0.0;
  for (const auto& p : grid) {
    CHECK(p.I >= 0.0);
    if (p.R_minus_I > best) {
      best = p.R_minus_I;
      at = p.f1;
    }
  }
  CHECK_THAT(at, WithinAbs(0.8, 1e-12));
  CHECK_THAT(best, WithinAbs(std::log(1.25), 1e-9));
  CHECK_THROWS_AS(landscape_grid(MetapopGraph({1, 1, 1}, Matrix(3, 3, 1.0 / 3.0))), ValidationError);
}

TEST_CASE("occupancy window probability decays at the rate I", "[ldp]") {
  // Exact probabilities, no sampling: -(1/n) log P(|f_n - f| <= 0.05) -> I(f)
  // as n grows, with the usual O(log n / n) correction.
  const double a = 0.59;
  const Matrix d = Matrix::from_rows({{1.0 - a, a}, {a, 1.0 - a}});
  for (double f : {0.6, 0.7, 0.8}) {
    const double I = rate_function(d, OccupancyVector({f, 1.0 - f})).I_value;
    CHECK_THAT(I, WithinAbs(oracle::rate_dual_2(d, f), 1e-9));
    double prev_err = 1e300;
    for (int n : {50, 400, 3200}) {
      const int lo = static_cast<int>(std::ceil(n * (f - 0.05) - 1e-9));
      const int hi = static_cast<int>(std::floor(n * (f + 0.05) + 1e-9));
      const double rate = -std::log(oracle::window_probability(a, n, lo, hi)) / n;
      // The window's own cost is I at its nearest edge.
      const double edge = rate_function(d, OccupancyVector({f - 0.05, 1.05 - f})).I_value;
      const double err = std::abs(rate - edge);
      CHECK(err < prev_err);
      prev_err = err;
    }
    CHECK(prev_err < 0.1 * I);
  }
}

TEST_CASE("forced steps pin the occupancy to a face", "[ldp]") {
  // State 0 always moves to 2 and 2 is entered only from 0, so f_0 = f_2.
  const Matrix d = Matrix::from_rows({{0.0, 0.0, 1.0}, {0.89, 0.11, 0.0}, {0.64, 0.36, 0.0}});
  CHECK(std::isinf(rate_function(d, OccupancyVector({0.3, 0.3, 0.4})).I_value));
  CHECK(std::isfinite(rate_function(d, OccupancyVector({0.4, 0.2, 0.4})).I_value));

  const MetapopGraph g({1.63, 1.11, 1.97}, d);
  const double log_rho = std::log(oracle::spectral_radius(oracle::mean_matrix(g.means(), d)));
  const auto s = max_rate_gap(g);
  CHECK_THAT(s.log_rho, WithinAbs(log_rho, 1e-9));
  CHECK_THAT(s.phi[0], WithinAbs(s.phi[2], 1e-12));
  CHECK(distance_inf(s.phi.values(), argmax_occupancy(g).phi.values()) < 1e-6);
}

#pragma once

// Finitely transitive patch graphs. An infinite graph whose patches fall
// into finitely many classes (all patches of a class see the same
// neighbourhood up to relabelling) behaves like the finite motif graph with
// class-aggregated dispersal d_PQ = sum_{Q' in Cl(Q)} d_PQ'.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "metapop/disperser.hpp"
#include "metapop/error.hpp"
#include "metapop/graph.hpp"
#include "metapop/linalg.hpp"

namespace metapop {

/// Habitat type 0 is the source type.
struct Motif {
  std::vector<std::size_t> types;  // habitat type of each motif patch
  Vector means_by_type;
  Matrix D;  // class-aggregated dispersal over motif patches
  std::vector<std::string> labels;

  void validate() const {
    if (types.empty()) throw ValidationError("motif has no patches");
    if (D.rows() != types.size() || D.cols() != types.size())
      throw ValidationError("motif D must be square over the motif patches");
    for (std::size_t t : types)
      if (t >= means_by_type.size()) throw ValidationError("motif patch refers to unknown habitat type " + std::to_string(t));
    bool has_source = false;
    for (std::size_t t : types) has_source = has_source || t == 0;
    if (!has_source) throw ValidationError("motif has no patch of the source type 0");
  }
};

inline MetapopGraph collapse(const Motif& motif) {
  motif.validate();
  Vector m(motif.types.size());
  for (std::size_t p = 0; p < m.size(); ++p) m[p] = motif.means_by_type[motif.types[p]];
  return MetapopGraph(std::move(m), motif.D, motif.labels);
}

/// Class aggregation of a finite periodic representation (a torus or cycle
/// cut from the infinite graph). Every patch of a class must produce the same
/// aggregated row; otherwise the labelling is not a valid motif.
inline Matrix aggregate_classes(const Matrix& d, const std::vector<std::size_t>& class_of, std::size_t n_classes,
                                double tol = 1e-12) {
  if (class_of.size() != d.rows()) throw ValidationError("class labelling must cover every patch");
  Matrix out(n_classes, n_classes, 0.0);
  std::vector<bool> seen(n_classes, false);
  for (std::size_t p = 0; p < d.rows(); ++p) {
    if (class_of[p] >= n_classes) throw ValidationError("class index out of range");
    Vector row(n_classes, 0.0);
    for (std::size_t q = 0; q < d.cols(); ++q) row[class_of[q]] += d(p, q);
    const std::size_t c = class_of[p];
    if (!seen[c]) {
      seen[c] = true;
      for (std::size_t j = 0; j < n_classes; ++j) out(c, j) = row[j];
      continue;
    }
    for (std::size_t j = 0; j < n_classes; ++j)
      if (std::abs(out(c, j) - row[j]) > tol)
        throw ValidationError("patches of class " + std::to_string(c) + " aggregate to different rows");
  }
  for (std::size_t c = 0; c < n_classes; ++c)
    if (!seen[c]) throw ValidationError("class " + std::to_string(c) + " has no patch");
  return out;
}

/// m_source E[prod_{n=1}^{T-1} m_{type(X_n)}], T the first return to any
/// source-type patch. With several source-type patches the expected
/// first-return offspring form a matrix Y and the value reported is rho(Y),
/// which reduces to the scalar functional when there is one.
inline PersistenceVerdict type_return_functional(const Motif& motif) {
  const MetapopGraph g = collapse(motif);
  require_irreducible(g);
  const double source_mean = motif.means_by_type[0];
  for (std::size_t t = 1; t < motif.means_by_type.size(); ++t)
    if (motif.means_by_type[t] > 1.0 && motif.means_by_type[t] != source_mean)
      throw ValidationError("motif has a second source type " + std::to_string(t) +
                            "; the criterion needs a single source type");
  std::vector<std::size_t> home;
  for (std::size_t p = 0; p < motif.types.size(); ++p)
    if (motif.types[p] == 0) home.push_back(p);
  const auto y = first_return_matrix(g.dispersal(), g.means(), home);
  double value = std::numeric_limits<double>::infinity();
  if (y) value = home.size() == 1 ? (*y)(0, 0) : spectral_radius_nonnegative(*y);
  return PersistenceVerdict::from_value(value, VerdictMethod::exact_linear_system);
}

/// Sources separated by n identical sinks on a line. From a source: stay
/// with 1 - p, land on the left neighbouring sink with pL, the right one with
/// pR. From a sink: left with l, right with r, stay with s.
struct PipelineSpec {
  std::size_t n = 1;
  double p = 0.5;
  double L = 0.5;
  double s = 0.0;
  double l = 0.5;
  double m = 0.5;
  double M = 2.0;

  double R() const noexcept { return 1.0 - L; }
  double r() const noexcept { return 1.0 - s - l; }

  void validate() const {
    if (n < 1) throw ValidationError("pipeline needs n >= 1 sinks between sources");
    for (double v : {p, L, s, l})
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("pipeline probabilities must lie in [0,1]");
    if (r() < -1e-15) throw ValidationError("pipeline sink probabilities s + l exceed 1");
    if (!(m >= 0.0 && M >= 0.0)) throw ValidationError("pipeline means must be non-negative");
  }
};

struct PipelineRate {
  double e = 0.0;
  double lambda = 0.0;
  double mu = 0.0;
  double product_residual = 0.0;  // |lambda mu - l/r|
  double sum_residual = 0.0;      // |lambda + mu - (1 - ms)/(mr)|
};

/// Closed-form depleting rate. lambda > 1 > mu are the roots of
/// m r x^2 - (1 - m s) x + m l = 0 and
///   e = (lambda^n - mu^n)/(lambda^(n+1) - mu^(n+1)) (L + R lambda mu)
///     + (lambda - mu)/(lambda^(n+1) - mu^(n+1)) (R + L (lambda mu)^n),
/// evaluated through powers of mu/lambda so large n does not overflow.
inline PipelineRate pipeline_depleting_rate(const PipelineSpec& ps) {
  ps.validate();
  const double m = ps.m, s = ps.s, l = ps.l, r = ps.r(), L = ps.L, R = ps.R();
  if (!(m * r > 0.0))
    throw ValidationError("degenerate pipeline quadratic (m r = 0); use depleting_rate on pipeline_to_motif instead");
  if (!(m < 1.0)) throw ValidationError("pipeline sinks need m < 1 for the closed form (roots must straddle 1)");

  const double a = m * r, b = 1.0 - m * s, c = m * l;
  const double disc = b * b - 4.0 * a * c;
  PipelineRate out;
  out.lambda = (b + std::sqrt(disc)) / (2.0 * a);
  out.mu = c / (a * out.lambda);
  const double lam = out.lambda, mu = out.mu;
  out.product_residual = std::abs(lam * mu - l / r);
  out.sum_residual = std::abs(lam + mu - b / a);

  const double n = static_cast<double>(ps.n);
  const double q = mu / lam;
  const double qn = std::pow(q, n), qn1 = qn * q;
  const double den = 1.0 - qn1;
  const double t1 = (1.0 - qn) / (lam * den);
  const double right = (1.0 - q) * R * std::pow(lam, -n) / den;
  const double left = (1.0 - q) * L * std::pow(mu, n) / den;
  out.e = t1 * (L + R * lam * mu) + right + left;
  return out;
}

/// (n+1)-patch motif: patch 0 is the source, patches 1..n the sinks in
/// left-to-right order. Leaving sink 1 to the left or sink n to the right
/// reaches a source, which collapses onto patch 0.
inline Motif pipeline_to_motif(const PipelineSpec& ps) {
  ps.validate();
  const std::size_t k = ps.n + 1;
  Matrix d(k, k, 0.0);
  d(0, 0) = 1.0 - ps.p;
  d(0, ps.n) += ps.p * ps.L;
  d(0, 1) += ps.p * ps.R();
  for (std::size_t j = 1; j <= ps.n; ++j) {
    d(j, j) += ps.s;
    d(j, j - 1) += ps.l;                      // j - 1 = 0 is the source
    d(j, j + 1 == k ? 0 : j + 1) += ps.r();  // past sink n is the next source
  }
  Motif motif;
  motif.types.assign(k, 1);
  motif.types[0] = 0;
  motif.means_by_type = {ps.M, ps.m};
  motif.D = std::move(d);
  motif.labels.push_back("source");
  for (std::size_t j = 1; j <= ps.n; ++j) motif.labels.push_back("sink" + std::to_string(j));
  return motif;
}

/// e = E[m^S] for the pipeline by the two-habitat linear system on the motif.
inline double pipeline_depleting_rate_linear(const PipelineSpec& ps) {
  return depleting_rate(collapse(pipeline_to_motif(ps)));
}

}  // namespace metapop

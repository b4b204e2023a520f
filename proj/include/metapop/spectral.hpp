#pragma once

// Perron route: the mean offspring matrix A = diag(m) D, its dominant
// eigenvalue rho (long-term growth rate) and the two Perron vectors.

#include <cmath>
#include <cstddef>
#include <utility>

#include "metapop/error.hpp"
#include "metapop/graph.hpp"
#include "metapop/linalg.hpp"

namespace metapop {

/// A_ij = m_i d_ij.
struct MeanMatrix {
  Matrix a;

  std::size_t size() const noexcept { return a.rows(); }
};

struct SpectralData {
  double rho = 0.0;
  Vector left;    // row vector, sums to 1
  Vector right;   // column vector, sums to 1
  double residual = 0.0;  // max of the two eigen-equation residuals, inf-norm
  bool periodic = false;  // D periodic: rho is valid, occupancy statements are not
};

inline MeanMatrix mean_matrix(const MetapopGraph& g) {
  const std::size_t k = g.size();
  Matrix a(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) a(i, j) = g.mean(i) * g.d(i, j);
  return {std::move(a)};
}

/// Perron data of a non-negative matrix. Requires irreducibility and no zero
/// row; a periodic A is accepted and flagged.
inline SpectralData growth_rate(const MeanMatrix& mm, const PowerOptions& opt = {}) {
  const Matrix& a = mm.a;
  if (!a.square() || a.rows() == 0) throw ValidationError("mean matrix must be square and non-empty");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (a(i, j) < 0.0) throw ValidationError("mean matrix has a negative entry in row " + std::to_string(i));
      any = any || a(i, j) > 0.0;
    }
    if (!any) throw ValidationError("mean matrix row " + std::to_string(i) + " is zero (m_i must be positive)");
  }
  const AssumptionReport s = chain_structure(a);
  if (!s.irreducible) throw ValidationError("mean matrix is reducible");

  PerronPair right = perron_right(a, opt);
  PerronPair left = perron_left(a, opt);
  SpectralData sd;
  sd.rho = right.value;
  sd.right = std::move(right.vector);
  sd.left = std::move(left.vector);
  sd.periodic = !s.aperiodic;

  const Vector ar = multiply(a, sd.right);
  const Vector la = multiply(sd.left, a);
  double res = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    res = std::max(res, std::abs(ar[i] - sd.rho * sd.right[i]));
    res = std::max(res, std::abs(la[i] - sd.rho * sd.left[i]));
  }
  sd.residual = res;
  return sd;
}

inline SpectralData growth_rate(const MetapopGraph& g, const PowerOptions& opt = {}) {
  return growth_rate(mean_matrix(g), opt);
}

/// phi_i proportional to left_i * right_i.
inline OccupancyVector occupancy_spectral(const SpectralData& sd) {
  Vector phi(sd.left.size());
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = sd.left[i] * sd.right[i];
  return OccupancyVector::normalized(std::move(phi));
}

/// Asymptotic spatial profile of E[Z_n]: the normalised left Perron vector.
inline OccupancyVector stable_geographic_distribution(const SpectralData& sd) {
  return OccupancyVector::normalized(sd.left);
}

}  // namespace metapop

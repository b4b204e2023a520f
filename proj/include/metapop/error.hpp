#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace metapop {

/// Input violates a type invariant or a modelling assumption. CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_residual(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", r);
  return buf;
}

/// An iterative solver hit its cap without meeting tolerance. CLI exit code 3.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + format_residual(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Monte Carlo output is unusable (e.g. no surviving runs). CLI exit code 4.
class StatisticalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace metapop

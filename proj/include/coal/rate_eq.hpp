#pragma once

#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "coal/walk_constants.hpp"

namespace coal {

/// Mean-field solution a' = -k_a a^2, b' = -k_b a b.
class RateEqSolution {
 public:
  RateEqSolution(double a0, double b0, double k_a, double k_b);

  double a(double t) const;
  double b(double t) const;
  std::pair<double, double> operator()(double t) const { return {a(t), b(t)}; }

  double a0() const { return a0_; }
  double b0() const { return b0_; }
  double k_a() const { return k_a_; }
  double k_b() const { return k_b_; }
  /// Decay exponent of b, k_b / k_a (0 when k_a = 0).
  double exponent() const { return k_a_ > 0 ? k_b_ / k_a_ : 0.0; }

 private:
  double a0_, b0_, k_a_, k_b_;
};

/// Validates a0, b0 > 0, k_a, k_b >= 0 (UsageError otherwise).
RateEqSolution closed_form(double a0, double b0, double k_a, double k_b);

struct RateEqSample {
  std::vector<double> t;
  std::vector<double> a;
  std::vector<double> b;
};

/// Adaptive fourth-order Runge-Kutta on (log a, log b) with step-doubling error control, reporting
/// values at the grid points. The grid must be non-decreasing and start at 0.
RateEqSample integrate_numeric(double a0, double b0, double k_a, double k_b, std::span<const double> t_grid,
                               double rel_tol = 1e-12);

/// (t a(t), t^{k_b/k_a} b(t)).
std::pair<double, double> asymptote_check(const RateEqSolution& sol, double t);

/// Naive (bare rates) and modified (walk-corrected rates) curves written as CSV
/// t,a_naive,b_naive,a_mod,b_mod. Naive columns are nan when a rate is instant.
void write_rate_eq_csv(std::ostream& os, double a0, double b0, const ModelParams& p, const WalkConstants& c,
                       std::span<const double> t_grid);

}  // namespace coal

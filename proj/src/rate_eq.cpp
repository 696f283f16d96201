#include "coal/rate_eq.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "coal/errors.hpp"

namespace coal {

RateEqSolution::RateEqSolution(double a0, double b0, double k_a, double k_b) : a0_(a0), b0_(b0), k_a_(k_a), k_b_(k_b) {
  if (!(a0 > 0) || !(b0 > 0) || !std::isfinite(a0) || !std::isfinite(b0))
    throw UsageError("rate equations need finite a0, b0 > 0");
  if (!(k_a >= 0) || !(k_b >= 0) || !std::isfinite(k_a) || !std::isfinite(k_b))
    throw UsageError("rate equations need finite k_a, k_b >= 0");
}

double RateEqSolution::a(double t) const { return a0_ / (1.0 + a0_ * k_a_ * t); }

double RateEqSolution::b(double t) const {
  if (k_a_ == 0.0) return b0_ * std::exp(-k_b_ * a0_ * t);
  // d/dt log b = -k_b a = -(k_b/k_a) d/dt log(1 + a0 k_a t)
  return b0_ * std::exp(-(k_b_ / k_a_) * std::log1p(a0_ * k_a_ * t));
}

RateEqSolution closed_form(double a0, double b0, double k_a, double k_b) { return {a0, b0, k_a, k_b}; }

RateEqSample integrate_numeric(double a0, double b0, double k_a, double k_b, std::span<const double> t_grid,
                               double rel_tol) {
  const RateEqSolution check(a0, b0, k_a, k_b);  // parameter validation only
  (void)check;
  if (t_grid.empty() || t_grid.front() != 0.0) throw UsageError("time grid must start at 0");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] >= t_grid[i - 1]) || !std::isfinite(t_grid[i])) throw UsageError("time grid must be non-decreasing");

  // u = log a, v = log b: u' = -k_a e^u, v' = -k_b e^u
  auto rk4 = [&](double u, double v, double h, double& u_out, double& v_out) {
    const double k1 = std::exp(u);
    const double k2 = std::exp(u - 0.5 * h * k_a * k1);
    const double k3 = std::exp(u - 0.5 * h * k_a * k2);
    const double k4 = std::exp(u - h * k_a * k3);
    const double avg = (k1 + 2 * k2 + 2 * k3 + k4) / 6.0;
    u_out = u - h * k_a * avg;
    v_out = v - h * k_b * avg;
  };

  RateEqSample out;
  double u = std::log(a0), v = std::log(b0), t = 0.0;
  double h = 1e-3 / std::max(1.0, a0 * std::max(k_a, k_b));
  const double h_min = 1e-14;
  for (double target : t_grid) {
    while (t < target) {
      double step = std::min(h, target - t);
      for (;;) {
        double u1, v1, uh, vh, u2, v2;
        rk4(u, v, step, u1, v1);
        rk4(u, v, 0.5 * step, uh, vh);
        rk4(uh, vh, 0.5 * step, u2, v2);
        const double err = std::max(std::abs(u2 - u1), std::abs(v2 - v1)) / 15.0;
        if (err <= rel_tol) {
          // Richardson-corrected value
          u = u2 + (u2 - u1) / 15.0;
          v = v2 + (v2 - v1) / 15.0;
          t += step;
          const double grow = err > 0 ? std::min(4.0, 0.9 * std::pow(rel_tol / err, 0.2)) : 4.0;
          if (step == h || grow < 1.0) h = step * grow;
          break;
        }
        step *= std::max(0.1, 0.9 * std::pow(rel_tol / err, 0.2));
        h = step;
        if (step < h_min) throw NumericalError("rate equation integration: step size underflow");
      }
    }
    out.t.push_back(target);
    out.a.push_back(std::exp(u));
    out.b.push_back(std::exp(v));
  }
  return out;
}

std::pair<double, double> asymptote_check(const RateEqSolution& sol, double t) {
  if (!(t > 0)) throw UsageError("asymptote_check needs t > 0");
  return {t * sol.a(t), std::pow(t, sol.exponent()) * sol.b(t)};
}

void write_rate_eq_csv(std::ostream& os, double a0, double b0, const ModelParams& p, const WalkConstants& c,
                       std::span<const double> t_grid) {
  const RateEqSolution mod(a0, b0, c.k_a, c.k_b);
  const bool naive_ok = !p.any_instant();
  const RateEqSolution naive(a0, b0, naive_ok ? p.coal_a : 0.0, naive_ok ? p.coal_b : 0.0);
  os << "t,a_naive,b_naive,a_mod,b_mod\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  char buf[256];
  for (double t : t_grid) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", t, naive_ok ? naive.a(t) : nan,
                  naive_ok ? naive.b(t) : nan, mod.a(t), mod.b(t));
    os << buf;
  }
}

}  // namespace coal

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "coal/experiment.hpp"
#include "coal/negdep.hpp"
#include "coal/walk_constants.hpp"

namespace coal {

/// Ensemble means of the site-averaged densities at each measurement time.
struct DensitySeries {
  std::vector<double> times;
  std::vector<double> xi, xi_err, eta, eta_err, p_occ_a, p_occ_b;
  std::uint64_t n_replicas = 0;
  std::string meta;  // free-form provenance (spec echo)

  /// Per-replica site averages, row-major [replica][time]; empty when read back from CSV.
  std::vector<double> rep_xi, rep_eta;

  std::size_t size() const { return times.size(); }
  bool has_replicas() const { return !rep_xi.empty(); }
};

/// Runs spec.replicas independent replicas (seeds derived from spec.seed and the replica index)
/// and averages. Standard errors come from a replica bootstrap. Replicas absorbed early simply
/// contribute zeros.
DensitySeries measure_densities(const ExperimentSpec& spec, std::uint64_t bootstrap_seed = 7, int bootstrap = 200);

/// Builds a series from per-replica rows (used by tests and the Python layer).
DensitySeries series_from_replicas(std::span<const double> times, std::span<const double> rep_xi,
                                   std::span<const double> rep_eta, std::uint64_t bootstrap_seed = 7,
                                   int bootstrap = 200);

/// Per-replica A (or B) counts at the first `columns` sites at time t: rows are replicas.
SampleMatrix sample_site_counts(const ExperimentSpec& spec, double t, std::size_t columns, bool species_a = true);

/// CSV with columns t,xi_hat,xi_err,eta_hat,eta_err,p_occ_a,p_occ_b,n_replicas.
void write_series_csv(std::ostream& os, const DensitySeries& s);
/// Validates the header; missing columns are a UsageError.
DensitySeries read_series_csv(std::istream& is);

struct FitResult {
  std::string kind;            // "a_constant" or "b_exponent"
  double exponent = 0.0;       // decay exponent (positive number)
  double exponent_err = 0.0;
  double amplitude = 0.0;      // c for A, c_0 for B
  double amplitude_err = 0.0;
  double t_lo = 0.0, t_hi = 0.0;
  int points = 0;
  double rms = 0.0;            // residual RMS on log-log axes
  double theory = 0.0;         // 1/(p_A lambda_A) for A, theta for B
  double rel_dev = 0.0;        // (estimate - theory) / theory
  double z_theory = 0.0;
  double naive = 0.0;          // lambda_B / lambda_A (B only)
  double z_naive = 0.0;
  bool conclusive = true;
  std::string diagnostics;
};

/// Earliest time where |d log(t xi)/d log t| < tol, through the last point not beyond t_limit.
/// Returns {0, 0} if no plateau is found.
std::pair<double, double> auto_window(const DensitySeries& s, double t_limit, double tol = 0.05);

/// Weighted least-squares fit of xi ~ c / t on the window; also reports the free log-log exponent.
FitResult fit_a_constant(const DensitySeries& s, const WalkConstants& c, double t_lo, double t_hi,
                         std::uint64_t seed = 11, int bootstrap = 400);

/// Weighted log-log regression of eta on t; the exponent is compared with theta and with the bare
/// ratio lambda_B / lambda_A (pass naive <= 0 to skip).
FitResult fit_b_exponent(const DensitySeries& s, const WalkConstants& c, double t_lo, double t_hi, double naive = 0.0,
                         std::uint64_t seed = 13, int bootstrap = 400);

void write_fit_text(std::ostream& os, const FitResult& f);
void write_fit_csv(std::ostream& os, std::span<const FitResult> fits);

/// Replicas needed for a target relative error on eta at the window end, assuming roughly Poisson
/// fluctuations of the B count: 1 / (target^2 V eta).
std::uint64_t replicas_for_b(double eta_end, std::uint64_t volume, double target_rel = 0.03);

/// Exact law at time t of the difference of two walkers started together, killed at rate `hazard`
/// while they coincide, on the torus: Phi_t(r) = P(R_t = r, not killed). Computed as
/// q_t(r) - E[1{tau <= t} q_{t-tau}(r)] with sampled killing times tau.
std::vector<double> killed_difference_density(const TorusGeometry& geom, PairRates rates, double t,
                                              std::uint64_t kill_samples, std::uint64_t seed);

struct BoundCheck {
  TestReport report;
  double lhs = 0.0, rhs = 0.0;
  double lhs_err = 0.0, rhs_err = 0.0;
  double rhs_distinct = 0.0;  // AA only: right side without self pairs
  double rhs_distinct_err = 0.0;
  double middle = 0.0;        // AB only: killed-kernel form
  double scale = 0.0;         // heat flow: lambda_A <f,1> s / t^2
};

struct LemmaOptions {
  std::uint64_t kill_samples = 2000000;
  double level = 0.95;
};

/// Heat-flow comparison E<xi_t, f> <= E<xi_{t-s}, P_s f> for f >= 0 (given on the torus sites),
/// averaged over all translations of f, paired per replica.
BoundCheck heat_flow_bound_check(const ExperimentSpec& spec, double t, double s, std::span<const double> f,
                                 const LemmaOptions& opt = {});

struct TwoPointChecks {
  BoundCheck aa;
  BoundCheck ab;
};

/// Two-point bounds E[xi_t(0)(xi_t(0)-1)] <= E<xi_{t-s} * xi_{t-s}, psi_s> and
/// E[xi_t(0) eta_t(0)] <= E[<xi_{t-s}, p^A_s><eta_{t-s}, p^B_s>], translation averaged and paired.
TwoPointChecks two_point_bound_check(const ExperimentSpec& spec, double t, double s, const LemmaOptions& opt = {});

}  // namespace coal

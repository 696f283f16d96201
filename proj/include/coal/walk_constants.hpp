#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "coal/dynamics.hpp"

namespace coal {

enum class GammaMethod { GreenSeries, MonteCarlo };

struct GammaEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  /// Monte Carlo only: upper bound on P(first return after the truncation horizon).
  double bias_bound = 0.0;
  GammaMethod method = GammaMethod::GreenSeries;
};

struct GammaBudget {
  std::uint64_t walks = 200000;
  std::uint32_t steps = 2000;
  std::uint32_t series_terms = 16384;
  std::uint64_t seed = 1;
};

/// Return probabilities P[S_n = 0], n = 0..n_max, of the discrete-time simple random walk on Z^d.
/// Cached per dimension; thread-safe.
const std::vector<double>& return_probabilities(int d, std::uint32_t n_max);

/// First-return probabilities f_n (f_0 = 0) from the renewal relation P_n = sum_k f_k P_{n-k}.
const std::vector<double>& first_return_probabilities(int d, std::uint32_t n_max);

/// Escape probability of the simple random walk. The series form needs d >= 3 (NumericalError
/// otherwise). The Monte Carlo form counts walks of `steps` steps that never revisit the origin.
GammaEstimate gamma_escape(int d, GammaMethod method, const GammaBudget& budget = {});

/// P(no return within `steps` steps) = 1 - sum_{k <= steps} f_k, exact up to rounding.
double truncated_escape(int d, std::uint32_t steps);

struct WalkConstants {
  double gamma = 0.0;
  double p_a = 0.0;
  double p_b = 0.0;
  double theta = 0.0;
  double k_a = 0.0;  // effective AA constant p_A lambda_A (gamma D_A when instant)
  double k_b = 0.0;  // effective AB constant p_B lambda_B (gamma (D_A + D_B) when instant)
  double gamma_err = 0.0;
  double p_a_err = 0.0;
  double p_b_err = 0.0;
  double theta_err = 0.0;
  double k_a_err = 0.0;
  double k_b_err = 0.0;
  GammaMethod method = GammaMethod::GreenSeries;

  /// Predicted amplitude of the A density, 1 / k_a.
  double a_constant() const { return 1.0 / k_a; }
};

WalkConstants derive_constants(const ModelParams& p, double gamma, double gamma_err = 0.0,
                               GammaMethod method = GammaMethod::GreenSeries);

/// Key-value text form, one `name = value ± stderr` per line.
void write_constants(std::ostream& os, const WalkConstants& c);
std::string format_constants(const WalkConstants& c);
/// Parses the key-value form. Unknown keys are ignored; missing theta or k_a is a UsageError.
WalkConstants parse_constants(std::istream& is);

enum class PairSpecies { AA, AB };
enum class PairMethod { Excursion, DifferenceWalk, TwoWalkers };

struct ProbabilityEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  std::uint64_t samples = 0;
};

/// Difference-walk jump rate and contact hazard of a colliding pair.
struct PairRates {
  double walk = 0.0;    // D_A + D_A or D_A + D_B
  double hazard = 0.0;  // 2 lambda_A or lambda_B
};
PairRates pair_rates(const ModelParams& p, PairSpecies species);

/// Fraction of pairs started together that have not coalesced by t_max. Instant flags are not
/// supported here (the answer is 0). The excursion method samples whole excursions from the
/// first-return law; the other two simulate every jump and are meant for small t_max.
ProbabilityEstimate pair_survival_mc(const ModelParams& p, PairSpecies species, double t_max, std::uint64_t n,
                                     std::uint64_t seed, int d = 3, PairMethod method = PairMethod::Excursion);

/// Killing times (those <= t_max) of `n` pairs started together, from the excursion sampler.
std::vector<double> sample_kill_times(int d, PairRates rates, double t_max, std::uint64_t n, std::uint64_t seed);

/// Law of the continuous-time walk with total rate `rate` on Z along one axis of Z^d after time t:
/// exp(-mu) I_|x|(mu) with mu = rate t / d, for |x| <= x_max.
std::vector<double> zd_axis_density(double rate, double t, int d, int x_max);

/// Same walk on the cycle Z/LZ via the eigenfunction expansion; entry x is P(X_t = x).
std::vector<double> torus_axis_density(double rate, double t, int d, int side);

/// Product-form heat kernel on a torus; value(dx) for a displacement given per axis.
class TorusHeatKernel {
 public:
  TorusHeatKernel(const TorusGeometry& geom, double rate, double t);
  /// Probability of displacement site `delta` (a site index read as a displacement from 0).
  double at(std::uint32_t delta) const;
  const std::vector<double>& axis() const { return axis_; }
  /// Full table over all displacement sites.
  std::vector<double> table() const;

 private:
  TorusGeometry geom_;
  std::vector<double> axis_;
};

enum class KernelKind { PsiAA, PsiB };

struct KernelCell {
  std::vector<int> x;
  std::vector<int> y;
  double value = 0.0;
  double stderr_ = 0.0;
  double bound = 0.0;  // product of the two free transition densities
};

struct KernelEstimate {
  double t = 0.0;
  KernelKind kind = KernelKind::PsiAA;
  std::vector<KernelCell> table;  // sampled cells within the tabulation box
  double table_mass = 0.0;
  double lumped_mass = 0.0;       // weight that landed outside the box
  double decorrelation_sum = 0.0;
  double decorrelation_err = 0.0;
  double limit_p = 0.0;           // p_A or p_B
  std::uint64_t paths = 0;
  std::uint64_t kill_paths = 0;
  int bound_violations = 0;       // cells above the product bound at family-wise 95%
};

struct KernelOptions {
  std::uint64_t paths = 100000;       // explicit two-walker paths for the pair table
  std::uint64_t kill_paths = 1000000;  // killing-time samples for the decorrelation sum
  std::uint64_t seed = 1;
  int d = 3;
  std::vector<int> start_a;  // empty = origin
  std::vector<int> start_b;
};

/// Monte Carlo estimate of the killed two-walker kernel psi_t(x, y) started at (a, b).
///
/// The pair table comes from explicit walkers weighted by exp(-hazard * collision local time).
/// The decorrelation sum is taken in the difference coordinate r = y - x:
/// sum_r |Phi_t(r) - p q_t(r)| with Phi_t(r) = q_t(r) - E[1{tau <= t} q_{t - tau}(r)], where tau
/// is the killing time; only tau is sampled, so the sum carries no per-cell noise.
KernelEstimate kernel_mc(KernelKind kind, double t, const ModelParams& p, const KernelOptions& opt = {});

}  // namespace coal

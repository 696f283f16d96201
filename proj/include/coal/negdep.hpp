#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "coal/dynamics.hpp"

namespace coal {

/// Rows are independent replicas, columns are observables.
class SampleMatrix {
 public:
  SampleMatrix() = default;
  SampleMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  void append_row(std::span<const double> values);

  /// Copy restricted to the given columns.
  SampleMatrix select(std::span<const std::size_t> columns) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Verdict { Consistent, Violation, Inconclusive };
const char* to_string(Verdict v);

struct TestReport {
  std::string name;
  double statistic = 0.0;  // estimated (lhs - rhs); the inequality claims statistic <= 0
  double stderr_ = 0.0;
  double ci_low = 0.0;     // one-sided lower confidence bound on the statistic
  double level = 0.95;
  Verdict verdict = Verdict::Inconclusive;
  std::string note;
};

void write_report_text(std::ostream& os, const TestReport& r);
void write_reports_csv(std::ostream& os, std::span<const TestReport> reports);

/// A coordinatewise non-decreasing function of a block of observables.
using MonotoneFn = std::function<double(std::span<const double>)>;
namespace monotone {
MonotoneFn sum();
MonotoneFn min();
MonotoneFn max();
/// 1 if every coordinate is >= k.
MonotoneFn all_at_least(double k);
/// 1 if any coordinate is >= k.
MonotoneFn any_at_least(double k);
}  // namespace monotone

struct StatOptions {
  double level = 0.95;
  int bootstrap = 1000;
  std::uint64_t seed = 1;
};

/// One-sided bootstrap test of Cov(f(X_F), g(X_G)) <= 0 over disjoint column sets.
TestReport na_covariance_test(const SampleMatrix& s, std::span<const std::size_t> f_set,
                              std::span<const std::size_t> g_set, const MonotoneFn& f, const MonotoneFn& g,
                              const StatOptions& opt = {});

/// Tests P[X >= k + l] <= P[X >= k] P[X >= l]. Every entry of `s` is an observation of X; entries of
/// one row are treated as a cluster (the delta-method error is cluster-robust), so a matrix of
/// replicas by sites pools sites under translation invariance.
TestReport tail_product_test(const SampleMatrix& s, int k, int l, const StatOptions& opt = {});

/// Tests E[X(X-1)...(X-n+1)] <= n! (E X)^n with a replica bootstrap; pooling as above.
TestReport factorial_moment_test(const SampleMatrix& s, int n, const StatOptions& opt = {});

struct MzOptions {
  int p = 2;
  std::vector<std::size_t> sizes;  // empty = powers of two from 2 up to cols
  double level = 0.95;
  int bootstrap = 400;
  std::uint64_t seed = 1;
};

struct MzResult {
  TestReport report;
  std::vector<std::size_t> sizes;
  std::vector<double> ratio;  // R(N) = E|S_N|^{2p} / E(sum X_i^2)^p
  std::vector<double> ratio_err;
  double slope = 0.0;  // dR / dlog N
  double slope_err = 0.0;
};

/// Square-function ratio over prefix column subsets. Columns are centred by cross-fitting: the
/// means from one half of the rows centre the other half. Verdict is a one-sided test that the
/// least-squares slope of R against log N is <= 0.
MzResult mz_ratio_check(const SampleMatrix& s, const MzOptions& opt = {});

/// R(N) for i.i.d. coordinates with the given central moments m2, m4 (p = 2):
/// (N m4 + 3N(N-1) m2^2) / (N m4 + N(N-1) m2^2).
double mz_ratio_iid_p2(std::size_t n, double m2, double m4);

struct MixtureBoundResult {
  int n = 0;
  std::string min_value;  // exact rational min_j 4(N+1) P[sum W = j]
  double min_value_double = 0.0;
  int argmin = 0;
  bool holds = false;  // min >= 1, decided exactly
};

/// Exact check with rational arithmetic. BudgetError when n > max_n.
MixtureBoundResult mixture_bound_exact(int n, int max_n = 64);

/// Discrete-time coloured coalescing chain on the box [-M, M]^d with colours 1..K.
struct ColourChainSpec {
  int dim = 1;
  int half_width = 4;   // M
  int colours = 8;      // K
  double t_end = 1.0;
  int steps_per_unit = 100;  // time step 1/N
  double diff = 1.0;         // D_A: each of 2d directions at D_A/2d, split evenly over target colours
  double coal = 1.0;         // lambda_A; recolouring runs at K lambda_A split evenly over colours
  double init_mean = 1.0;    // each (site, colour) starts occupied with probability mean / K
  bool periodic = false;     // wrap moves instead of suppressing them
  bool record_paths = false;
  std::uint64_t seed = 1;
  /// Optional explicit start: (site, colour) cells; overrides the Bernoulli draw when non-empty.
  std::vector<std::pair<std::uint32_t, int>> initial_cells;
};

struct ColourChainResult {
  std::uint32_t sites = 0;
  int steps = 0;
  std::vector<std::uint32_t> xi;  // colour-summed counts at the final step
  /// paths[i][t] = site * K + colour of the i-th initial particle at step t (record_paths only).
  std::vector<std::vector<std::uint32_t>> paths;
};

ColourChainResult colour_chain_run(const ColourChainSpec& spec);

/// True if every pair of stored paths that meet stays together afterwards.
bool paths_coalesce(const ColourChainResult& r);

}  // namespace coal

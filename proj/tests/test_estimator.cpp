#include <cmath>
#include <random>
#include <sstream>

#include "coal/errors.hpp"
#include "coal/estimator.hpp"
#include "coal/walk_constants.hpp"
#include "doctest.h"

using namespace coal;

namespace {

constexpr double kGamma3 = 0.65946267;

std::vector<double> geometric(double t0, double r, int n) {
  std::vector<double> t;
  for (int i = 0; i < n; ++i) t.push_back(t0 * std::pow(r, i));
  return t;
}

// per-replica rows with multiplicative noise around a(t), b(t)
template <class FA, class FB>
DensitySeries synthetic(const std::vector<double>& t, int R, FA a, FB b, unsigned seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n(0, 0.1);
  std::vector<double> xi, eta;
  for (int r = 0; r < R; ++r) {
    const double wa = 1 + n(g), wb = 1 + n(g);  // replica-level amplitude noise, correlated in t
    for (double s : t) {
      xi.push_back(a(s) * wa * (1 + 0.05 * n(g)));
      eta.push_back(b(s) * wb * (1 + 0.05 * n(g)));
    }
  }
  return series_from_replicas(t, xi, eta);
}

ExperimentSpec small_spec() {
  ExperimentSpec s;
  s.dim = 3;
  s.side = 12;
  s.times = {0, 1, 2, 4, 8};
  s.replicas = 40;
  s.seed = 3;
  s.override_guard = true;
  return s;
}

}  // namespace

TEST_CASE("fits recover synthetic laws") {
  const auto t = geometric(10, 1.25, 16);
  const auto s = synthetic(t, 300, [](double x) { return 2.5 / x; }, [](double x) { return 0.8 * std::pow(x, -0.7); }, 1);
  const auto c = derive_constants(ModelParams{}, kGamma3);
  const auto fa = fit_a_constant(s, c, t.front(), t.back());
  CHECK(fa.conclusive);
  CHECK(std::abs(fa.amplitude - 2.5) < 3 * fa.amplitude_err);
  CHECK(std::abs(fa.exponent - 1.0) < 3 * fa.exponent_err);
  CHECK(fa.theory == doctest::Approx(c.a_constant()));
  const auto fb = fit_b_exponent(s, c, t.front(), t.back(), 1.0);
  CHECK(fb.conclusive);
  CHECK(std::abs(fb.exponent - 0.7) < 3 * fb.exponent_err);
  CHECK(fb.exponent_err > 0);
  CHECK(fb.z_naive < -3);
  // window helper finds the plateau of a 1/t law
  const auto w = auto_window(s, 1e9, 0.2);
  CHECK(w.second == doctest::Approx(t.back()));
}

TEST_CASE("fits without replica rows use analytic errors") {
  DensitySeries s;
  s.times = geometric(1, 2, 8);
  for (double t : s.times) {
    s.xi.push_back(3.0 / t);
    s.xi_err.push_back(0.01 * 3.0 / t);
    s.eta.push_back(std::pow(t, -1.5));
    s.eta_err.push_back(0.01 * std::pow(t, -1.5));
  }
  s.p_occ_a = s.p_occ_b = s.xi;
  WalkConstants c;
  c.k_a = 1.0 / 3.0;
  c.theta = 1.5;
  const auto fa = fit_a_constant(s, c, 1, 128);
  CHECK(fa.amplitude == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(fa.rel_dev == doctest::Approx(0.0).epsilon(1e-10));
  const auto fb = fit_b_exponent(s, c, 1, 128);
  CHECK(fb.exponent == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("B fit is inconclusive when eta is consistent with zero") {
  DensitySeries s;
  s.times = {1, 2, 4};
  s.xi = {1, 0.5, 0.25};
  s.xi_err = {0.01, 0.01, 0.01};
  s.eta = {0.1, 0.01, 0.0};
  s.eta_err = {0.01, 0.01, 0.01};
  WalkConstants c;
  c.k_a = 1;
  c.theta = 1;
  CHECK_FALSE(fit_b_exponent(s, c, 1, 4).conclusive);
  CHECK_FALSE(fit_a_constant(s, c, 3, 3.5).conclusive);
}

TEST_CASE("no coalescence conserves densities") {
  auto spec = small_spec();
  spec.params.coal_a = 0;
  spec.params.coal_b = 0;
  const auto s = measure_densities(spec);
  REQUIRE(s.size() == 5);
  for (std::size_t k = 1; k < s.size(); ++k) {
    CHECK(s.xi[k] == s.xi[0]);
    CHECK(s.eta[k] == s.eta[0]);
  }
  for (std::size_t r = 0; r < spec.replicas; ++r)
    for (std::size_t k = 1; k < s.size(); ++k) CHECK(s.rep_xi[r * 5 + k] == s.rep_xi[r * 5]);
}

TEST_CASE("measured densities: monotone, lower bound, occupancy") {
  auto spec = small_spec();
  spec.replicas = 60;
  const auto s = measure_densities(spec);
  for (std::size_t k = 1; k < s.size(); ++k) {
    CHECK(s.xi[k] <= s.xi[k - 1] + 3 * s.xi_err[k]);
    CHECK(s.eta[k] <= s.eta[k - 1] + 3 * s.eta_err[k]);
  }
  // xi(1) >= 1 / (1/xi(0) + lambda_A)
  CHECK(s.xi[1] + 3 * s.xi_err[1] >= 1.0 / (1.0 / s.xi[0] + spec.params.coal_a));
  for (std::size_t k = 0; k < s.size(); ++k) {
    CHECK(s.p_occ_a[k] <= s.xi[k] + 1e-15);
    CHECK(s.p_occ_a[k] > 0);
  }
  // occupancy over mean approaches one as sites empty out
  const std::size_t last = s.size() - 1;
  CHECK(s.p_occ_a[last] / s.xi[last] > s.p_occ_a[0] / s.xi[0]);
}

TEST_CASE("measurement is deterministic and thread independent") {
  auto spec = small_spec();
  spec.replicas = 8;
  const auto a = measure_densities(spec);
  spec.threads = 3;
  const auto b = measure_densities(spec);
  std::ostringstream oa, ob;
  write_series_csv(oa, a);
  write_series_csv(ob, b);
  CHECK(oa.str() == ob.str());
}

TEST_CASE("series CSV round trip and schema check") {
  auto spec = small_spec();
  spec.replicas = 4;
  const auto s = measure_densities(spec);
  std::ostringstream os;
  write_series_csv(os, s);
  CHECK(os.str().rfind("t,xi_hat,xi_err,eta_hat,eta_err,p_occ_a,p_occ_b,n_replicas\n", 0) == 0);
  std::istringstream is(os.str());
  const auto back = read_series_csv(is);
  REQUIRE(back.size() == s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    CHECK(back.xi[k] == s.xi[k]);
    CHECK(back.eta_err[k] == s.eta_err[k]);
  }
  CHECK(back.n_replicas == 4);
  std::istringstream missing("t,xi_hat,xi_err\n1,2,3\n");
  CHECK_THROWS_AS(read_series_csv(missing), UsageError);
}

TEST_CASE("replica budget") {
  CHECK(replicas_for_b(1e-3, 1000, 0.03) == 1112);
  CHECK_THROWS_AS(replicas_for_b(0, 10), UsageError);
}

TEST_CASE("killed difference density") {
  const TorusGeometry g(3, 16);
  // no killing: the free law
  const auto free = killed_difference_density(g, {2.0, 0.0}, 3.0, 1000, 1);
  const auto q = TorusHeatKernel(g, 2.0, 3.0).table();
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(free[i] == q[i]);
  // frozen pair: exponential survival at the origin
  const auto frozen = killed_difference_density(g, {0.0, 1.5}, 2.0, 200000, 2);
  CHECK(frozen[0] == doctest::Approx(std::exp(-3.0)).epsilon(0.03));
  // total mass equals the pair survival probability
  ModelParams p;
  const auto rates = pair_rates(p, PairSpecies::AA);
  const auto phi = killed_difference_density(g, rates, 4.0, 400000, 3);
  const auto q4 = TorusHeatKernel(g, rates.walk, 4.0).table();
  double mass = 0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    CHECK(phi[i] >= 0);
    CHECK(phi[i] <= q4[i] + 1e-12);
    mass += phi[i];
  }
  const auto surv = pair_survival_mc(p, PairSpecies::AA, 4.0, 400000, 4);
  CHECK(std::abs(mass - surv.value) < 4 * std::sqrt(2.0) * surv.stderr_);
}

TEST_CASE("heat flow check: identity and no-coalescence equality") {
  auto spec = small_spec();
  const TorusGeometry g = spec.geometry();
  std::vector<double> f(g.volume(), 0.0);
  f[0] = 1;
  const auto zero_lag = heat_flow_bound_check(spec, 4, 0, f);
  CHECK(zero_lag.report.statistic == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(zero_lag.report.verdict == Verdict::Consistent);
  spec.params.coal_a = 0;
  const auto flat = heat_flow_bound_check(spec, 8, 2, f);
  CHECK(std::abs(flat.report.statistic) < 1e-12);
  CHECK(flat.scale == 0);
  spec.params.coal_a = 1;
  const auto hf = heat_flow_bound_check(spec, 8, 2, f);
  CHECK(hf.report.verdict == Verdict::Consistent);
  CHECK(hf.report.statistic < 0);
  CHECK(hf.scale == doctest::Approx(2.0 / 64.0));
  std::vector<double> bad(g.volume(), 0.0);
  bad[1] = -1;
  CHECK_THROWS_AS(heat_flow_bound_check(spec, 8, 2, bad), UsageError);
  CHECK_THROWS_AS(heat_flow_bound_check(spec, 2, 8, f), UsageError);
}

TEST_CASE("two-point checks") {
  LemmaOptions opt;
  opt.kill_samples = 200000;
  SUBCASE("no A coalescence: AA bound is an equality") {
    auto spec = small_spec();
    spec.side = 8;
    spec.params.coal_a = 0;
    spec.init = InitSpec::deterministic(2, 0);
    spec.replicas = 300;
    const auto r = two_point_bound_check(spec, 4, 2, opt);
    CHECK(std::abs(r.aa.lhs - r.aa.rhs_distinct) < 4 * (r.aa.lhs_err + r.aa.rhs_distinct_err));
    // 2V independent walkers: ordered pairs per site are close to 2^2
    CHECK(r.aa.lhs == doctest::Approx(4.0).epsilon(0.05));
    CHECK(r.ab.lhs == 0);
    CHECK(r.ab.rhs == 0);
    CHECK(r.ab.report.verdict == Verdict::Consistent);
  }
  SUBCASE("standard rates: both bounds hold") {
    auto spec = small_spec();
    spec.replicas = 60;
    const auto r = two_point_bound_check(spec, 8, 2, opt);
    CHECK(r.aa.report.verdict == Verdict::Consistent);
    CHECK(r.ab.report.verdict == Verdict::Consistent);
    CHECK(r.aa.rhs_distinct <= r.aa.rhs);
    CHECK(r.ab.middle <= r.ab.rhs + 1e-12);
  }
}

TEST_CASE("experiment spec key-value round trip and guard") {
  ExperimentSpec s;
  s.side = 20;
  s.params.diff_b = 0;
  s.params.instant_a = true;
  s.replicas = 17;
  s.times = {0.5, 2, 7};
  s.init = InitSpec::bernoulli(0.3, 0.2);
  std::istringstream is(format_spec(s));
  ExperimentSpec back;
  apply_key_values(back, parse_key_values(is));
  CHECK(format_spec(back) == format_spec(s));
  CHECK(back.params.instant_a);
  CHECK(back.replicas == 17);

  ExperimentSpec g;
  g.side = 64;
  g.times = {500};
  CHECK(g.finite_size_limit() == doctest::Approx(256.0 / 6.0));
  CHECK_FALSE(g.guard_ok());
  g.times = {40};
  CHECK(g.guard_ok());

  std::istringstream unknown("bogus = 1\n");
  ExperimentSpec u;
  CHECK_THROWS_AS(apply_key_values(u, parse_key_values(unknown)), UsageError);
  std::istringstream inf("lambda_B = inf\n# comment\n");
  apply_key_values(u, parse_key_values(inf));
  CHECK(u.params.instant_b);
}

TEST_CASE("parallel_for covers every index and rethrows") {
  std::vector<int> hit(100, 0);
  parallel_for(100, 4, [&](std::uint64_t i) { hit[i] += 1; });
  for (int h : hit) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 2, [](std::uint64_t i) {
                    if (i == 3) throw UsageError("boom");
                  }),
                  UsageError);
}

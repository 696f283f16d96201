#include <cmath>
#include <sstream>

#include "coal/errors.hpp"
#include "coal/walk_constants.hpp"
#include "doctest.h"

using namespace coal;

namespace {
constexpr double kGamma3 = 0.65946267;

double combined_z(double a, double ea, double b, double eb) { return std::abs(a - b) / std::hypot(ea, eb); }
}  // namespace

TEST_CASE("return probabilities start at one and f_0 vanishes") {
  const auto& p = return_probabilities(3, 8);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 0.0);
  CHECK(p[2] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));  // 2d paths back out of (2d)^2
  const auto& f = first_return_probabilities(1, 4);
  CHECK(f[0] == 0.0);
  CHECK(f[2] == doctest::Approx(0.5));
  CHECK(f[4] == doctest::Approx(0.125));
}

TEST_CASE("Green series escape probability") {
  CHECK(gamma_escape(3, GammaMethod::GreenSeries).value == doctest::Approx(kGamma3).epsilon(1e-6));
  CHECK(gamma_escape(4, GammaMethod::GreenSeries).value == doctest::Approx(0.80679833).epsilon(1e-6));
  CHECK(gamma_escape(5, GammaMethod::GreenSeries).value == doctest::Approx(0.86482139).epsilon(1e-6));
  CHECK_THROWS_AS(gamma_escape(2, GammaMethod::GreenSeries), NumericalError);
  CHECK_THROWS_AS(gamma_escape(1, GammaMethod::GreenSeries), NumericalError);
}

TEST_CASE("Monte Carlo escape agrees with the series in d = 3, 4, 5") {
  GammaBudget b;
  b.walks = 40000;
  b.steps = 1000;
  for (int d : {3, 4, 5}) {
    const auto mc = gamma_escape(d, GammaMethod::MonteCarlo, b);
    const auto gs = gamma_escape(d, GammaMethod::GreenSeries);
    CAPTURE(d);
    // the truncated escape is the exact expectation of the finite-step estimator
    CHECK(combined_z(mc.value, mc.stderr_, truncated_escape(d, b.steps), 0) < 4.0);
    CHECK(mc.value - gs.value >= -4 * mc.stderr_);
    CHECK(mc.value - gs.value <= mc.bias_bound + 4 * mc.stderr_);
  }
  CHECK(gamma_escape(5, GammaMethod::GreenSeries).value > gamma_escape(3, GammaMethod::GreenSeries).value);
}

TEST_CASE("recurrent walk: Monte Carlo escape shrinks with the horizon") {
  GammaBudget b;
  b.walks = 20000;
  b.steps = 50;
  const double short_run = gamma_escape(1, GammaMethod::MonteCarlo, b).value;
  b.steps = 2000;
  const double long_run = gamma_escape(1, GammaMethod::MonteCarlo, b).value;
  CHECK(long_run < short_run);
  CHECK(long_run < 0.03);
  CHECK(truncated_escape(1, 20000) < 0.01);
}

TEST_CASE("derive_constants examples") {
  ModelParams p;
  auto c = derive_constants(p, kGamma3);
  CHECK(c.p_a == doctest::Approx(0.397395).epsilon(1e-5));
  CHECK(c.a_constant() == doctest::Approx(2.51639).epsilon(1e-5));

  ModelParams sym{.diff_a = 1, .diff_b = 0, .coal_a = 1, .coal_b = 1};
  CHECK(derive_constants(sym, kGamma3).theta == doctest::Approx(1.0).epsilon(1e-14));

  ModelParams inst{.diff_a = 1, .diff_b = 1, .coal_a = 1, .coal_b = 1, .instant_a = true, .instant_b = true};
  auto ci = derive_constants(inst, kGamma3);
  CHECK(ci.theta == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(ci.k_a == doctest::Approx(kGamma3));

  ModelParams four{.diff_a = 1, .diff_b = 1, .coal_a = 4, .coal_b = 4};
  CHECK(derive_constants(four, kGamma3).theta == doctest::Approx(1.752).epsilon(2e-3));
}

TEST_CASE("theta is monotone on a parameter grid") {
  for (double la : {0.25, 0.5, 1.0, 2.0, 4.0})
    for (double lb : {0.25, 0.5, 1.0, 2.0, 4.0})
      for (double db : {0.0, 0.5, 1.0}) {
        ModelParams p{.diff_a = 1, .diff_b = db, .coal_a = la, .coal_b = lb};
        ModelParams pa = p, pb = p;
        pa.coal_a *= 1.1;
        pb.coal_b *= 1.1;
        const auto c = derive_constants(p, kGamma3);
        CHECK(c.p_a > 0);
        CHECK(c.p_a < 1);
        CHECK(c.p_b > 0);
        CHECK(c.p_b < 1);
        CHECK(c.theta > 0);
        CHECK(derive_constants(pa, kGamma3).theta < c.theta);
        CHECK(derive_constants(pb, kGamma3).theta > c.theta);
      }
}

TEST_CASE("constants file round trip") {
  auto c = derive_constants(ModelParams{}, kGamma3, 1e-7);
  const std::string text = format_constants(c);
  CHECK(text.find("gamma = ") != std::string::npos);
  CHECK(text.find("p_A = ") != std::string::npos);
  CHECK(text.find("theta = ") != std::string::npos);
  CHECK(text.find("±") != std::string::npos);
  std::istringstream is(text);
  auto back = parse_constants(is);
  CHECK(back.theta == doctest::Approx(c.theta).epsilon(1e-12));
  CHECK(back.k_a == doctest::Approx(c.k_a).epsilon(1e-12));
  CHECK(back.gamma_err == doctest::Approx(c.gamma_err).epsilon(1e-6));
  std::istringstream bad("gamma = 0.5\n");
  CHECK_THROWS_AS(parse_constants(bad), UsageError);
}

TEST_CASE("pair survival: excursion sampler matches the formula") {
  ModelParams p;
  const auto est = pair_survival_mc(p, PairSpecies::AA, 1e4, 200000, 3);
  const auto c = derive_constants(p, kGamma3);
  CHECK(combined_z(est.value, est.stderr_, c.p_a, 0) < 3.0);

  ModelParams q{.diff_a = 1, .diff_b = 0.5, .coal_a = 1, .coal_b = 2};
  const auto eb = pair_survival_mc(q, PairSpecies::AB, 1e4, 200000, 4);
  CHECK(combined_z(eb.value, eb.stderr_, derive_constants(q, kGamma3).p_b, 0) < 3.0);
}

TEST_CASE("pair survival: no coalescence channel survives surely") {
  ModelParams p{.diff_a = 1, .diff_b = 1, .coal_a = 0, .coal_b = 1};
  for (auto m : {PairMethod::Excursion, PairMethod::DifferenceWalk, PairMethod::TwoWalkers})
    CHECK(pair_survival_mc(p, PairSpecies::AA, 50, 1000, 1, 3, m).value == 1.0);
}

TEST_CASE("pair survival: the three samplers agree at small t") {
  ModelParams p{.diff_a = 1, .diff_b = 0.5, .coal_a = 1.5, .coal_b = 1};
  for (auto sp : {PairSpecies::AA, PairSpecies::AB}) {
    const auto e = pair_survival_mc(p, sp, 5, 40000, 10, 3, PairMethod::Excursion);
    const auto d = pair_survival_mc(p, sp, 5, 40000, 11, 3, PairMethod::DifferenceWalk);
    const auto w = pair_survival_mc(p, sp, 5, 40000, 12, 3, PairMethod::TwoWalkers);
    CHECK(combined_z(e.value, e.stderr_, d.value, d.stderr_) < 4.0);
    CHECK(combined_z(d.value, d.stderr_, w.value, w.stderr_) < 4.0);
  }
}

TEST_CASE("pair survival: AB with a frozen B equals the formula for p_B") {
  ModelParams p{.diff_a = 1, .diff_b = 0, .coal_a = 1, .coal_b = 1};
  const auto est = pair_survival_mc(p, PairSpecies::AB, 1e4, 200000, 5);
  CHECK(combined_z(est.value, est.stderr_, derive_constants(p, kGamma3).p_b, 0) < 3.0);
}

TEST_CASE("pair survival is monotone in lambda_A and D_A") {
  const double t = 200;
  const std::uint64_t n = 100000;
  double prev = 2;
  for (double la : {0.5, 1.0, 2.0}) {
    ModelParams p{.diff_a = 1, .diff_b = 1, .coal_a = la, .coal_b = 1};
    const auto e = pair_survival_mc(p, PairSpecies::AA, t, n, 20);
    CHECK(e.value < prev - 2 * e.stderr_);
    prev = e.value;
  }
  prev = -1;
  for (double da : {0.5, 1.0, 2.0}) {
    ModelParams p{.diff_a = da, .diff_b = 1, .coal_a = 1, .coal_b = 1};
    const auto e = pair_survival_mc(p, PairSpecies::AA, t, n, 21);
    CHECK(e.value > prev + 2 * e.stderr_);
    prev = e.value;
  }
}

TEST_CASE("transition densities are normalised") {
  for (int L : {4, 7, 16, 64})
    for (double t : {0.0, 0.3, 5.0, 400.0}) {
      TorusHeatKernel k(TorusGeometry(3, L), 2.0, t);
      const auto tab = k.table();
      double s = 0;
      for (double v : tab) {
        CHECK(v >= -1e-15);
        s += v;
      }
      CAPTURE(L);
      CAPTURE(t);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  const auto z = zd_axis_density(1.0, 50.0, 3, 200);
  double s = z[0];
  for (std::size_t x = 1; x < z.size(); ++x) s += 2 * z[x];
  CHECK(std::abs(s - 1.0) < 1e-12);
  // on a ring larger than the spread, the torus law equals the lattice law
  const auto ring = torus_axis_density(1.0, 2.0, 3, 64);
  const auto line = zd_axis_density(1.0, 2.0, 3, 10);
  for (int x = 0; x <= 10; ++x) CHECK(ring[x] == doctest::Approx(line[x]).epsilon(1e-10));
}

TEST_CASE("kernel at t = 0 is the start indicator") {
  KernelOptions o;
  o.paths = 1000;
  o.kill_paths = 1000;
  o.start_a = {0, 0, 0};
  o.start_b = {1, 0, 0};
  const auto k = kernel_mc(KernelKind::PsiB, 0.0, ModelParams{}, o);
  REQUIRE(k.table.size() == 1);
  CHECK(k.table[0].x == std::vector<int>{0, 0, 0});
  CHECK(k.table[0].y == std::vector<int>{1, 0, 0});
  CHECK(k.table[0].value == 1.0);
  CHECK(k.table_mass == 1.0);
}

TEST_CASE("kernel respects the product bound and its decorrelation sum decays") {
  KernelOptions o;
  o.paths = 100000;
  o.kill_paths = 200000;
  double prev = 1e9;
  for (double t : {4.0, 16.0, 64.0}) {
    const auto k = kernel_mc(KernelKind::PsiAA, t, ModelParams{}, o);
    CAPTURE(t);
    CHECK(k.bound_violations == 0);
    CHECK(k.table_mass + k.lumped_mass <= 1.0 + 1e-12);
    CHECK(k.decorrelation_sum + 3 * k.decorrelation_err < prev);
    prev = k.decorrelation_sum;
  }
}

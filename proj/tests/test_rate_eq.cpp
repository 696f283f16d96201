#include <cmath>
#include <random>
#include <sstream>

#include "coal/errors.hpp"
#include "coal/rate_eq.hpp"
#include "doctest.h"

using namespace coal;

TEST_CASE("closed form examples") {
  CHECK(closed_form(1, 1, 1, 1).a(1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(closed_form(1, 1, 1, 2).b(3) == doctest::Approx(0.0625).epsilon(1e-15));
  const auto s = closed_form(0.7, 0.3, 1.3, 1.3);
  for (double t : {0.0, 0.5, 10.0, 1e4}) CHECK(s.b(t) == doctest::Approx(0.3 * s.a(t) / 0.7).epsilon(1e-13));
  const auto z = closed_form(2, 1, 0, 0.5);
  CHECK(z.b(3) == doctest::Approx(std::exp(-0.5 * 2 * 3)).epsilon(1e-15));
  CHECK(z.a(3) == 2.0);
  CHECK_THROWS_AS(closed_form(0, 1, 1, 1), UsageError);
  CHECK_THROWS_AS(closed_form(1, 1, -1, 1), UsageError);
}

TEST_CASE("closed form satisfies the ODE by finite differences") {
  const auto s = closed_form(1.3, 0.4, 0.8, 1.7);
  for (double t = 1e-3; t < 1e4; t *= 3) {
    const double h = 1e-4 * t;
    const double da = (s.a(t + h) - s.a(t - h)) / (2 * h);
    const double db = (s.b(t + h) - s.b(t - h)) / (2 * h);
    CHECK(da == doctest::Approx(-0.8 * s.a(t) * s.a(t)).epsilon(1e-6));
    CHECK(db == doctest::Approx(-1.7 * s.a(t) * s.b(t)).epsilon(1e-6));
  }
}

TEST_CASE("numeric integration matches the closed form") {
  std::mt19937_64 g(99);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<double> grid{0};
  for (double t = 1e-3; t <= 1e4; t *= 1.5) grid.push_back(t);
  grid.push_back(1e4);
  for (int k = 0; k < 20; ++k) {
    const double a0 = std::pow(10, u(g)), b0 = std::pow(10, u(g));
    // exponent kb/ka kept in [0.1, 5] so b(10^4) stays representable
    const double ka = std::pow(10, u(g)), kb = ka * std::pow(10, (u(g) + 1.5) / 3.0 * 1.7 - 1.0);
    const auto num = integrate_numeric(a0, b0, ka, kb, grid);
    const auto ref = closed_form(a0, b0, ka, kb);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      CHECK(std::abs(num.a[i] / ref.a(grid[i]) - 1) < 1e-8);
      CHECK(std::abs(num.b[i] / ref.b(grid[i]) - 1) < 1e-8);
    }
  }
}

TEST_CASE("numeric integration edge cases") {
  const std::vector<double> zero{0.0};
  const auto s = integrate_numeric(0.3, 0.2, 1, 1, zero);
  CHECK(s.a[0] == 0.3);
  CHECK(s.b[0] == 0.2);
  const std::vector<double> g{0, 1, 10};
  const auto c = integrate_numeric(0.3, 0.2, 1, 0, g);
  for (double b : c.b) CHECK(b == doctest::Approx(0.2).epsilon(1e-14));
  const std::vector<double> bad{1, 2};
  CHECK_THROWS_AS(integrate_numeric(1, 1, 1, 1, bad), UsageError);
  const std::vector<double> down{0, 2, 1};
  CHECK_THROWS_AS(integrate_numeric(1, 1, 1, 1, down), UsageError);
}

TEST_CASE("asymptote check") {
  const auto s = closed_form(1, 1, 1, 1);
  CHECK(asymptote_check(s, 1e6).first == doctest::Approx(0.999999).epsilon(1e-9));
  const auto s2 = closed_form(1, 1, 1, 2);
  CHECK(std::abs(asymptote_check(s2, 1e4).second - 1) < 2e-4);
  const auto near0 = asymptote_check(s2, 1e-9);
  CHECK(near0.first < 1e-8);
  CHECK(near0.second < 1e-8);
}

TEST_CASE("modified over naive exponent equals p_B / p_A") {
  for (double db : {0.0, 0.5, 2.0})
    for (double lb : {0.5, 3.0}) {
      ModelParams p{.diff_a = 1, .diff_b = db, .coal_a = 1.7, .coal_b = lb};
      const auto c = derive_constants(p, 0.65946267);
      const double naive = closed_form(1, 1, p.coal_a, p.coal_b).exponent();
      const double mod = closed_form(1, 1, c.k_a, c.k_b).exponent();
      CHECK(mod / naive == doctest::Approx(c.p_b / c.p_a).epsilon(1e-13));
    }
}

TEST_CASE("rate equation CSV") {
  ModelParams p;
  const auto c = derive_constants(p, 0.65946267);
  const std::vector<double> g{0, 1, 2};
  std::ostringstream os;
  write_rate_eq_csv(os, 1, 1, p, c, g);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "t,a_naive,b_naive,a_mod,b_mod");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 3);
  p.instant_a = true;
  std::ostringstream os2;
  write_rate_eq_csv(os2, 1, 1, p, derive_constants(p, 0.65946267), g);
  CHECK(os2.str().find("nan") != std::string::npos);
}

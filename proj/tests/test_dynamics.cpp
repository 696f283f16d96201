#include <cmath>
#include <map>
#include <vector>

#include "coal/dynamics.hpp"
#include "coal/errors.hpp"
#include "doctest.h"

using namespace coal;

namespace {

ModelParams unit_params() { return ModelParams{}; }

Configuration two_site(std::uint32_t a0, std::uint32_t b0, std::uint32_t a1, std::uint32_t b1) {
  Configuration c(2);
  c.a = {a0, a1};
  c.b = {b0, b1};
  return c;
}

}  // namespace

TEST_CASE("site_rates examples") {
  auto r = site_rates(2, 1, unit_params());
  CHECK(r.walk_a == 2);
  CHECK(r.walk_b == 1);
  CHECK(r.coal_aa == 2);
  CHECK(r.coal_ab == 2);
  CHECK(r.total() == 7);

  ModelParams p{.diff_a = 0.3, .diff_b = 0.2, .coal_a = 5, .coal_b = 7};
  auto one = site_rates(1, 0, p);
  CHECK(one.coal_aa == 0);
  CHECK(one.coal_ab == 0);

  ModelParams q{.diff_a = 0, .diff_b = 0, .coal_a = 0.5, .coal_b = 2};
  auto r3 = site_rates(3, 2, q);
  CHECK(r3.coal_aa == 3);
  CHECK(r3.coal_ab == 12);
  CHECK(r3.total() == 15);

  ModelParams inst = unit_params();
  inst.instant_a = inst.instant_b = true;
  auto ri = site_rates(2, 2, inst);
  CHECK(ri.coal_aa == 0);
  CHECK(ri.coal_ab == 0);
}

TEST_CASE("RateIndex search and totals") {
  RateIndex idx(5);
  const std::vector<double> rates{0.5, 0.0, 2.0, 0.0, 1.5};
  for (std::size_t i = 0; i < rates.size(); ++i) idx.set(i, rates[i]);
  CHECK(idx.total() == doctest::Approx(4.0));
  CHECK(idx.find(0.0) == 0);
  CHECK(idx.find(0.49) == 0);
  CHECK(idx.find(0.5) == 2);
  CHECK(idx.find(2.49) == 2);
  CHECK(idx.find(2.5) == 4);
  CHECK(idx.find(3.99) == 4);
  idx.set(2, 0.0);
  CHECK(idx.total() == doctest::Approx(2.0));
  CHECK(idx.find(0.6) == 4);
  idx.rebuild();
  CHECK(idx.total() == idx.recomputed_total());
}

TEST_CASE("single A on empty torus only walks") {
  TorusGeometry g(3, 4);
  Configuration c(g.volume());
  c.a[5] = 1;
  Simulator sim(g, unit_params(), c, 1);
  sim.enable_event_log(true);
  sim.run_until(50.0);
  CHECK(sim.total_a() == 1);
  for (const auto& e : sim.event_log()) CHECK(e.kind == EventKind::WalkA);
  CHECK(sim.time() == 50.0);
}

TEST_CASE("two frozen A coalesce at rate 2 lambda") {
  TorusGeometry g(1, 2);
  ModelParams p{.diff_a = 0, .diff_b = 0, .coal_a = 1, .coal_b = 1};
  const int runs = 10000;
  double sum = 0, sum2 = 0;
  for (int r = 0; r < runs; ++r) {
    Simulator sim(g, p, two_site(2, 0, 0, 0), 42, r);
    REQUIRE(sim.step());
    CHECK(sim.total_a() == 1);
    CHECK_FALSE(sim.step());
    CHECK(sim.absorbed());
    sum += sim.time();
    sum2 += sim.time() * sim.time();
  }
  const double mean = sum / runs;
  const double sd = std::sqrt(sum2 / runs - mean * mean);
  CHECK(std::abs(mean - 0.5) < 3.0 * sd / std::sqrt(double(runs)));
}

TEST_CASE("generator oracle on a two-site torus") {
  // First-event law from hand-enumerated channel rates: P(kind, site) = rate / total,
  // first time ~ Exp(total). 10^5 runs per start state, tolerance 5 sigma.
  TorusGeometry g(1, 2);
  ModelParams p{.diff_a = 1.0, .diff_b = 0.7, .coal_a = 0.5, .coal_b = 1.3};
  const std::vector<Configuration> starts{two_site(2, 1, 0, 0), two_site(1, 2, 1, 0), two_site(2, 2, 1, 1),
                                          two_site(0, 2, 2, 0)};
  const int runs = 100000;
  std::uint64_t seed = 0;
  for (const auto& start : starts) {
    std::map<std::pair<int, int>, double> expected;
    double total = 0;
    for (std::uint32_t x = 0; x < 2; ++x) {
      auto r = site_rates(start.a[x], start.b[x], p);
      expected[{int(EventKind::WalkA), int(x)}] = r.walk_a;
      expected[{int(EventKind::WalkB), int(x)}] = r.walk_b;
      expected[{int(EventKind::CoalAA), int(x)}] = r.coal_aa;
      expected[{int(EventKind::CoalAB), int(x)}] = r.coal_ab;
      total += r.total();
    }
    std::map<std::pair<int, int>, int> counts;
    double tsum = 0;
    for (int r = 0; r < runs; ++r) {
      Simulator sim(g, p, start, 1000 + seed, r);
      sim.enable_event_log(true);
      REQUIRE(sim.step());
      const auto& e = sim.event_log().front();
      counts[{int(e.kind), int(e.site)}]++;
      tsum += sim.time();
    }
    ++seed;
    for (const auto& [key, rate] : expected) {
      const double q = rate / total;
      const double sigma = std::sqrt(std::max(q * (1 - q), 1e-12) / runs);
      CHECK(std::abs(counts[key] / double(runs) - q) <= 5 * sigma + 1e-12);
    }
    CHECK(std::abs(tsum / runs - 1.0 / total) < 5.0 / total / std::sqrt(double(runs)));
  }
}

TEST_CASE("walk, AA and AB events update counts as specified") {
  TorusGeometry g(1, 2);
  ModelParams p{.diff_a = 0, .diff_b = 0, .coal_a = 0, .coal_b = 1};
  Simulator sim(g, p, two_site(1, 3, 0, 0), 5);
  REQUIRE(sim.step());
  CHECK(sim.config().a[0] == 1);
  CHECK(sim.config().b[0] == 2);
}

TEST_CASE("run_until with t_end equal to current time is the identity") {
  TorusGeometry g(3, 4);
  auto c = init_configuration(g, InitSpec::poisson(1, 1), 3);
  Simulator sim(g, unit_params(), c, 3);
  int calls = 0;
  const std::vector<double> mt{0.0};
  sim.run_until(0.0, mt, [&](double t, const Configuration& cc) {
    ++calls;
    CHECK(t == 0.0);
    CHECK(cc.a == c.a);
  });
  CHECK(calls == 1);
  CHECK(sim.events() == 0);
  CHECK(sim.config().a == c.a);
  CHECK(sim.config().b == c.b);
  CHECK_THROWS_AS(sim.run_until(-1.0), UsageError);
}

TEST_CASE("monotone totals and decreasing A density over a run") {
  TorusGeometry g(3, 32);
  auto c = init_configuration(g, InitSpec::poisson(1, 1), 17);
  Simulator sim(g, unit_params(), c, 17);
  const auto a0 = sim.total_a();
  auto last_a = sim.total_a();
  auto last_b = sim.total_b();
  sim.enable_event_log(true);
  while (sim.next_event_time() <= 100.0) {
    sim.step();
    const auto& e = sim.event_log().back();
    CHECK(sim.total_a() <= last_a);
    CHECK(sim.total_b() <= last_b);
    if (sim.total_a() < last_a) CHECK(e.kind == EventKind::CoalAA);
    if (sim.total_b() < last_b) CHECK(e.kind == EventKind::CoalAB);
    last_a = sim.total_a();
    last_b = sim.total_b();
  }
  CHECK(sim.total_a() < a0);
  sim.check_invariants();
}

TEST_CASE("event log times strictly increase") {
  TorusGeometry g(2, 8);
  auto c = init_configuration(g, InitSpec::poisson(1, 1), 8);
  Simulator sim(g, unit_params(), c, 8);
  sim.enable_event_log(true);
  sim.run_until(5.0);
  const auto& log = sim.event_log();
  REQUIRE(log.size() > 10);
  for (std::size_t i = 1; i < log.size(); ++i) CHECK(log[i].time > log[i - 1].time);
}

TEST_CASE("A trajectory is autonomous of the B population") {
  TorusGeometry g(3, 8);
  auto with_b = init_configuration(g, InitSpec::poisson(1, 1), 77);
  auto without_b = with_b;
  std::fill(without_b.b.begin(), without_b.b.end(), 0u);
  ModelParams p{.diff_a = 1, .diff_b = 2.5, .coal_a = 1, .coal_b = 3};
  Simulator s1(g, p, with_b, 77);
  Simulator s2(g, ModelParams{.diff_a = 1, .diff_b = 0, .coal_a = 1, .coal_b = 0}, without_b, 77);
  const std::vector<double> mt{1, 2, 5, 10, 20, 40};
  std::vector<std::vector<std::uint32_t>> snaps1, snaps2;
  s1.run_until(40, mt, [&](double, const Configuration& c) { snaps1.push_back(c.a); });
  s2.run_until(40, mt, [&](double, const Configuration& c) { snaps2.push_back(c.a); });
  REQUIRE(snaps1.size() == mt.size());
  CHECK(snaps1 == snaps2);
  CHECK(s1.config().a == s2.config().a);
  CHECK(s1.total_b() < with_b.total_b());
}

TEST_CASE("rate index stays consistent over a long run") {
  TorusGeometry g(3, 24);
  auto c = init_configuration(g, InitSpec::poisson(2, 2), 5);
  Simulator sim(g, ModelParams{.diff_a = 1, .diff_b = 1, .coal_a = 0.1, .coal_b = 0.1}, c, 5);
  while (sim.events() < 1'000'000 && sim.step()) {
  }
  CHECK(sim.events() == 1'000'000);
  CHECK(sim.index_drift() < 1e-9);
  sim.check_invariants();
}

TEST_CASE("instant mode: resolution and invariants") {
  TorusGeometry g(1, 2);
  ModelParams p = unit_params();
  p.instant_a = p.instant_b = true;

  // two A on adjacent sites; a jump merges them
  Simulator merge(g, p, two_site(1, 0, 1, 0), 9);
  REQUIRE(merge.step());
  CHECK(merge.total_a() == 1);

  // A jumping onto three B absorbs all of them
  ModelParams pb = p;
  pb.diff_b = 0;
  Simulator absorb(g, pb, two_site(1, 0, 0, 3), 9);
  REQUIRE(absorb.step());
  CHECK(absorb.config().a[1] == 1);
  CHECK(absorb.total_b() == 0);

  // the violating initial state is rejected; resolve_instant repairs it
  auto bad = two_site(2, 1, 0, 0);
  CHECK_THROWS_AS(Simulator(g, p, bad, 1), ConsistencyError);
  resolve_instant(bad, p);
  CHECK(bad.a[0] == 1);
  CHECK(bad.b[0] == 0);

  // empty lattice is absorbed
  Simulator empty(g, p, two_site(0, 0, 0, 0), 1);
  CHECK(empty.absorbed());
  CHECK_FALSE(empty.step());

  TorusGeometry g3(3, 6);
  auto c = init_configuration(g3, InitSpec::poisson(1, 1), 4);
  resolve_instant(c, p);
  Simulator sim(g3, p, c, 4);
  for (int i = 0; i < 20000 && sim.step(); ++i) sim.check_invariants();
}

TEST_CASE("finite large lambda_B approaches instant absorption") {
  // One A next to three frozen B. With lambda_B = 1000, all three are absorbed before the
  // A leaves with probability (3000/3001)(2000/2001)(1000/1001).
  TorusGeometry g(1, 2);
  ModelParams p{.diff_a = 1, .diff_b = 0, .coal_a = 1, .coal_b = 1000};
  const int runs = 2000;
  int absorbed_all = 0;
  for (int r = 0; r < runs; ++r) {
    Simulator sim(g, p, two_site(1, 0, 0, 3), 31, r);
    sim.enable_event_log(true);
    int walks = 0;
    while (sim.step()) {
      if (sim.event_log().back().kind == EventKind::WalkA && ++walks == 2) break;
    }
    absorbed_all += sim.total_b() == 0;
  }
  const double q = (3000.0 / 3001) * (2000.0 / 2001) * (1000.0 / 1001);
  CHECK(absorbed_all / double(runs) >= q - 5 * std::sqrt(q * (1 - q) / runs) - 1e-3);
}

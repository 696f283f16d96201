#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "coal");
  std::ostringstream out, err;
  const int code = coal::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("coal_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"nonsense"}).code == 2);
  CHECK(run({"simulate", "--set", "bogus=1"}).code == 2);
  CHECK(run({"simulate", "--set", "noequals"}).code == 2);
  CHECK(run({"simulate", "--config", "/nonexistent/file"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("simulate writes one row per point and is byte-identical on repeat") {
  const auto d1 = scratch("sim1"), d2 = scratch("sim2");
  const std::vector<std::string> common{"--set", "side=8", "--set", "t0=0.5", "--set", "ratio=1.5",
                                        "--set", "n_points=4", "--set", "replicas=2", "--override-guard"};
  auto a1 = common, a2 = common;
  a1.insert(a1.begin(), {"simulate", "--out", d1.string()});
  a2.insert(a2.begin(), {"simulate", "--out", d2.string()});
  REQUIRE(run(a1).code == 0);
  REQUIRE(run(a2).code == 0);
  const auto csv = slurp(d1 / "series.csv");
  CHECK(csv == slurp(d2 / "series.csv"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  const auto manifest = slurp(d1 / "manifest.txt");
  CHECK(manifest.find("[replica_seeds]") != std::string::npos);
  CHECK(manifest.find("code_version") != std::string::npos);
}

TEST_CASE("simulate trips the finite-size guard with 3") {
  const auto d = scratch("guard");
  CHECK(run({"simulate", "--out", d.string(), "--set", "side=8", "--set", "times=50"}).code == 3);
}

TEST_CASE("constants") {
  auto r = run({"constants"});
  REQUIRE(r.code == 0);
  for (const char* key : {"gamma = ", "p_A = ", "p_B = ", "theta = ", "±"}) CHECK(r.out.find(key) != std::string::npos);
  CHECK(r.out.find("gamma = 0.6594") != std::string::npos);
  auto inst = run({"constants", "--lambda_A", "inf", "--lambda_B", "inf"});
  REQUIRE(inst.code == 0);
  CHECK(inst.out.find("theta = 2 ") != std::string::npos);
  CHECK(run({"constants", "--dim", "2"}).code == 4);
}

TEST_CASE("fit recovers a synthetic c/t series and rejects bad schemas") {
  const auto d = scratch("fit");
  {
    std::ofstream os(d / "series.csv");
    os << "t,xi_hat,xi_err,eta_hat,eta_err,p_occ_a,p_occ_b,n_replicas\n";
    for (double t = 10; t < 1000; t *= 1.5)
      os << t << "," << 2.5 / t << "," << 0.01 * 2.5 / t << "," << std::pow(t, -1.2) << ","
         << 0.01 * std::pow(t, -1.2) << ",0,0,100\n";
  }
  REQUIRE(run({"constants", "--out", (d / "c.txt").string()}).code == 0);
  auto r = run({"fit", "--series", (d / "series.csv").string(), "--constants", (d / "c.txt").string(), "--t-lo",
                "10", "--t-hi", "1000", "--csv", (d / "fit.csv").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("c = 2.50000") != std::string::npos);
  CHECK(r.out.find("theta_hat = 1.2000") != std::string::npos);
  CHECK(fs::exists(d / "fit.csv"));
  {
    std::ofstream os(d / "bad.csv");
    os << "t,xi_hat\n1,2\n";
  }
  CHECK(run({"fit", "--series", (d / "bad.csv").string(), "--constants", (d / "c.txt").string()}).code == 2);
}

TEST_CASE("negdep and kernels") {
  const auto d = scratch("negdep");
  auto r = run({"negdep", "--test", "mixture", "--max-n", "64", "--out", (d / "c10.csv").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("violation") == std::string::npos);
  auto c = run({"negdep", "--test", "controls"});
  CHECK(c.out.find("consistent") == std::string::npos);
  auto k = run({"kernels", "--t", "2", "--paths", "2000", "--kill-paths", "2000", "--out", (d / "k.csv").string()});
  CHECK(k.code == 0);
  CHECK(slurp(d / "k.csv").rfind("t,x0,x1,x2,y0,y1,y2,value,stderr,bound\n", 0) == 0);
  auto rq = run({"rate-eq", "--points", "5"});
  CHECK(rq.code == 0);
  CHECK(rq.out.rfind("t,a_naive,b_naive,a_mod,b_mod\n", 0) == 0);
}

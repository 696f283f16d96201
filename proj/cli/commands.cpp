#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "coal/errors.hpp"
#include "coal/estimator.hpp"
#include "coal/negdep.hpp"
#include "coal/rate_eq.hpp"
#include "coal/walk_constants.hpp"

#ifndef COAL_VERSION
#define COAL_VERSION "unknown"
#endif

namespace coal::cli {

namespace fs = std::filesystem;

namespace {

/// Raised when the finite-size guard trips.
struct GuardTrip : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rate options shared by several subcommands; strings so that "inf" selects the instant limit.
struct RateArgs {
  int dim = 3;
  std::string d_a = "1", d_b = "1", l_a = "1", l_b = "1";

  void add(CLI::App* app) {
    app->add_option("--dim", dim, "lattice dimension")->capture_default_str();
    app->add_option("--D_A", d_a, "A jump rate")->capture_default_str();
    app->add_option("--D_B", d_b, "B jump rate")->capture_default_str();
    app->add_option("--lambda_A", l_a, "AA coalescence rate (inf = instant)")->capture_default_str();
    app->add_option("--lambda_B", l_b, "AB coalescence rate (inf = instant)")->capture_default_str();
  }
  ModelParams params() const {
    ExperimentSpec s;
    apply_key_values(s, {{"D_A", d_a}, {"D_B", d_b}, {"lambda_A", l_a}, {"lambda_B", l_b}});
    s.params.validate();
    return s.params;
  }
};

// Experiment spec from an optional config file plus key=value overrides.
struct SpecArgs {
  std::string config;
  std::vector<std::string> sets;
  unsigned threads = 0;
  bool override_guard = false;

  void add(CLI::App* app) {
    app->add_option("--config", config, "flat key = value experiment file");
    app->add_option("--set", sets, "override one key (key=value), repeatable");
    app->add_option("--threads", threads, "worker threads (default: from spec)");
    app->add_flag("--override-guard", override_guard, "run even if the finite-size guard trips");
  }
  ExperimentSpec build() const {
    ExperimentSpec s;
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw UsageError("cannot open config file " + config);
      apply_key_values(s, parse_key_values(in));
    }
    KeyValues kv;
    for (const auto& a : sets) {
      const auto eq = a.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + a);
      auto trim = [](std::string x) {
        x.erase(0, x.find_first_not_of(" \t"));
        x.erase(x.find_last_not_of(" \t") + 1);
        return x;
      };
      kv[trim(a.substr(0, eq))] = trim(a.substr(eq + 1));
    }
    apply_key_values(s, kv);
    if (threads) s.threads = threads;
    if (override_guard) s.override_guard = true;
    s.validate();
    return s;
  }
};

void check_guard(const ExperimentSpec& s) {
  if (s.guard_ok() || s.override_guard) return;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "finite-size guard: t_max = %g exceeds (L/4)^2 / (2 d max D) = %g; enlarge side or pass --override-guard",
                s.t_max(), s.finite_size_limit());
  throw GuardTrip(buf);
}

std::ofstream open_out(const std::string& path) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(path);
  if (!os) throw UsageError("cannot write " + path);
  return os;
}

// Writes to a file when a path is given, otherwise to `out`.
template <class Fn>
void emit(const std::string& path, std::ostream& out, Fn fn) {
  if (path.empty()) {
    fn(out);
  } else {
    auto os = open_out(path);
    fn(os);
  }
}

// ------------------------------------------------------------------------------- simulate

struct SimulateArgs {
  SpecArgs spec;
  std::string out_dir;
  int bootstrap = 200;
};

void write_manifest(const fs::path& path, const ExperimentSpec& s, double seconds,
                    const std::vector<std::string>& outputs) {
  auto os = open_out(path.string());
  os << "# run manifest\n"
     << "code_version = " << COAL_VERSION << "\n"
     << "wall_clock_seconds = " << seconds << "\n"
     << "seed_scheme = splitmix64(base, replica, stream); streams InitA=1 InitB=2 EventsA=3 EventsB=4\n";
  os << "[spec]\n" << format_spec(s);
  os << "[replica_seeds]\n";
  for (std::uint64_t r = 0; r < s.replicas; ++r)
    os << r << " = " << derive_seed(s.seed, r, Stream::InitA) << "," << derive_seed(s.seed, r, Stream::InitB) << ","
       << derive_seed(s.seed, r, Stream::EventsA) << "," << derive_seed(s.seed, r, Stream::EventsB) << "\n";
  os << "[outputs]\n";
  for (const auto& o : outputs) os << o << "\n";
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  ExperimentSpec s = a.spec.build();
  if (!a.out_dir.empty()) s.out_dir = a.out_dir;
  check_guard(s);
  const auto t0 = std::chrono::steady_clock::now();
  const DensitySeries series = measure_densities(s, 7, a.bootstrap);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path dir(s.out_dir);
  fs::create_directories(dir);
  const fs::path csv = dir / "series.csv";
  {
    auto os = open_out(csv.string());
    write_series_csv(os, series);
  }
  // schema check on what was written
  std::ifstream back(csv);
  const DensitySeries re = read_series_csv(back);
  if (re.size() != series.size()) throw ConsistencyError("series CSV did not re-read cleanly");
  write_manifest(dir / "manifest.txt", s, secs, {csv.string()});
  out << "wrote " << csv.string() << " (" << series.size() << " rows, " << s.replicas << " replicas, " << secs
      << " s)\n";
  return kOk;
}

// ------------------------------------------------------------------------------ constants

struct ConstantsArgs {
  RateArgs rates;
  std::string method = "series";
  std::uint64_t walks = 200000;
  std::uint32_t steps = 2000;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_constants(const ConstantsArgs& a, std::ostream& out) {
  const ModelParams p = a.rates.params();
  GammaBudget b;
  b.walks = a.walks;
  b.steps = a.steps;
  b.seed = a.seed;
  const GammaMethod m = a.method == "mc" ? GammaMethod::MonteCarlo : GammaMethod::GreenSeries;
  const GammaEstimate g = gamma_escape(a.rates.dim, m, b);
  if (!(g.value > 0)) throw NumericalError("escape probability is zero (recurrent walk); no constants exist");
  const double err = m == GammaMethod::MonteCarlo ? std::hypot(g.stderr_, g.bias_bound) : g.stderr_;
  const WalkConstants c = derive_constants(p, g.value, err, m);
  emit(a.out, out, [&](std::ostream& os) {
    os << "# dim = " << a.rates.dim << "\n";
    write_constants(os, c);
  });
  return kOk;
}

// -------------------------------------------------------------------------------- rate-eq

struct RateEqArgs {
  RateArgs rates;
  double a0 = 1, b0 = 1, t_max = 1e4;
  int points = 60;
  std::string out;
};

int cmd_rate_eq(const RateEqArgs& a, std::ostream& out) {
  const ModelParams p = a.rates.params();
  if (a.points < 2 || !(a.t_max > 0)) throw UsageError("rate-eq needs --points >= 2 and --t-max > 0");
  const WalkConstants c = derive_constants(p, gamma_escape(a.rates.dim, GammaMethod::GreenSeries).value);
  std::vector<double> grid{0.0};
  const double lo = std::min(1e-2, a.t_max / 10);
  for (int i = 0; i < a.points; ++i) grid.push_back(lo * std::pow(a.t_max / lo, double(i) / (a.points - 1)));
  emit(a.out, out, [&](std::ostream& os) { write_rate_eq_csv(os, a.a0, a.b0, p, c, grid); });
  return kOk;
}

// ------------------------------------------------------------------------------------ fit

struct FitArgs {
  std::string series, constants, csv, species = "both";
  double t_lo = -1, t_hi = -1, t_limit = std::numeric_limits<double>::infinity(), naive = 0;
};

int cmd_fit(const FitArgs& a, std::ostream& out) {
  std::ifstream si(a.series);
  if (!si) throw UsageError("cannot open series file " + a.series);
  const DensitySeries s = read_series_csv(si);
  std::ifstream ci(a.constants);
  if (!ci) throw UsageError("cannot open constants file " + a.constants);
  const WalkConstants c = parse_constants(ci);
  double lo = a.t_lo, hi = a.t_hi;
  if (lo < 0 || hi < 0) {
    const auto w = auto_window(s, a.t_limit);
    if (w.second <= 0) {
      out << "no plateau of t*xi found; pass --t-lo and --t-hi\n";
      lo = s.times.front();
      hi = s.times.back();
    } else {
      lo = lo < 0 ? w.first : lo;
      hi = hi < 0 ? w.second : hi;
    }
  }
  std::vector<FitResult> fits;
  if (a.species != "b") fits.push_back(fit_a_constant(s, c, lo, hi));
  if (a.species != "a") fits.push_back(fit_b_exponent(s, c, lo, hi, a.naive));
  for (const auto& f : fits) write_fit_text(out, f);
  if (!a.csv.empty()) {
    auto os = open_out(a.csv);
    write_fit_csv(os, fits);
  }
  return kOk;
}

// --------------------------------------------------------------------------------- negdep

struct NegdepArgs {
  SpecArgs spec;
  std::string test = "all";
  double t = 10;
  std::size_t columns = 0;
  int max_n = 64;
  int bootstrap = 1000;
  std::string out;
};

std::vector<TestReport> synthetic_controls(std::uint64_t seed) {
  Rng g = make_rng(seed, 0, Stream::Aux);
  std::normal_distribution<double> n;
  SampleMatrix cor(2000, 2);
  for (std::size_t r = 0; r < cor.rows(); ++r) {
    const double z = n(g);
    cor.at(r, 0) = z + 0.5 * n(g);
    cor.at(r, 1) = z + 0.5 * n(g);
  }
  const std::size_t f[] = {0}, gset[] = {1};
  std::vector<TestReport> out;
  out.push_back(na_covariance_test(cor, f, gset, monotone::sum(), monotone::sum()));
  SampleMatrix mix(2000, 1), spike(3000, 1);
  for (std::size_t r = 0; r < mix.rows(); ++r) mix.at(r, 0) = (r % 2) ? 3 : 0;
  for (std::size_t r = 0; r < spike.rows(); ++r) spike.at(r, 0) = (r % 10) ? 0 : 10;
  out.push_back(tail_product_test(mix, 1, 1));
  out.push_back(factorial_moment_test(spike, 2));
  for (auto& r : out) r.name = "control_" + r.name;
  return out;
}

int cmd_negdep(const NegdepArgs& a, std::ostream& out) {
  std::vector<TestReport> reports;
  const bool all = a.test == "all";
  if (a.test == "mixture" || all) {
    for (int n = 1; n <= a.max_n; ++n) {
      const auto c = mixture_bound_exact(n);
      TestReport r;
      r.name = "mixture(N=" + std::to_string(n) + ")";
      r.statistic = 1.0 - c.min_value_double;
      r.level = 1.0;
      r.verdict = c.holds ? Verdict::Consistent : Verdict::Violation;
      char buf[128];
      std::snprintf(buf, sizeof buf, "min 4(N+1)P[sum=j] = %.6f at j=%d, compared exactly with 1", c.min_value_double,
                    c.argmin);
      r.note = buf;
      reports.push_back(r);
    }
  }
  if (a.test == "controls" || all) {
    const auto c = synthetic_controls(7);
    reports.insert(reports.end(), c.begin(), c.end());
  }
  const bool sim = all || a.test == "na" || a.test == "tail" || a.test == "factorial" || a.test == "mz";
  if (sim) {
    ExperimentSpec s = a.spec.build();
    s.times = {a.t};
    check_guard(s);
    const std::size_t cols = a.columns ? a.columns : std::min<std::size_t>(s.geometry().volume(), 1024);
    const SampleMatrix m = sample_site_counts(s, a.t, cols);
    StatOptions opt;
    opt.bootstrap = a.bootstrap;
    opt.seed = s.seed;
    if (a.test == "na" || all) {
      if (cols < 4) throw UsageError("covariance tests need at least 4 columns");
      const std::size_t f1[] = {0}, g1[] = {1}, f2[] = {0, 1}, g2[] = {2, 3};
      reports.push_back(na_covariance_test(m, f1, g1, monotone::sum(), monotone::sum(), opt));
      reports.back().name += "(sites 0|1, identity)";
      reports.push_back(na_covariance_test(m, f2, g2, monotone::max(), monotone::max(), opt));
      reports.back().name += "(sites 01|23, max)";
      reports.push_back(na_covariance_test(m, f2, g2, monotone::sum(), monotone::any_at_least(1), opt));
      reports.back().name += "(sites 01|23, sum vs occupied)";
    }
    if (a.test == "tail" || all) reports.push_back(tail_product_test(m, 1, 1, opt));
    if (a.test == "factorial" || all) {
      reports.push_back(factorial_moment_test(m, 2, opt));
      reports.push_back(factorial_moment_test(m, 3, opt));
    }
    if (a.test == "mz" || all) {
      MzOptions mo;
      mo.seed = s.seed;
      for (std::size_t n = 16; n <= cols; n *= 2) mo.sizes.push_back(n);
      if (mo.sizes.size() < 2) mo.sizes.clear();
      reports.push_back(mz_ratio_check(m, mo).report);
    }
  }
  if (reports.empty()) throw UsageError("unknown --test " + a.test);
  for (const auto& r : reports) write_report_text(out, r);
  if (!a.out.empty()) {
    auto os = open_out(a.out);
    write_reports_csv(os, reports);
  }
  return kOk;
}

// -------------------------------------------------------------------------------- kernels

struct KernelArgs {
  RateArgs rates;
  std::string kind = "aa";
  std::vector<double> times{4, 16, 64};
  std::uint64_t paths = 100000, kill_paths = 1000000, seed = 1;
  std::string out;
};

int cmd_kernels(const KernelArgs& a, std::ostream& out) {
  const ModelParams p = a.rates.params();
  if (p.any_instant()) throw UsageError("kernels need finite coalescence rates");
  if (a.kind != "aa" && a.kind != "b") throw UsageError("--kind must be aa or b");
  KernelOptions o;
  o.paths = a.paths;
  o.kill_paths = a.kill_paths;
  o.seed = a.seed;
  o.d = a.rates.dim;
  std::vector<KernelEstimate> est;
  for (double t : a.times) {
    est.push_back(kernel_mc(a.kind == "aa" ? KernelKind::PsiAA : KernelKind::PsiB, t, p, o));
    const auto& k = est.back();
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "t = %g: decorrelation sum %.5f +- %.5f, table mass %.5f, lumped %.3g, limit p %.5f, bound "
                  "violations %d\n",
                  t, k.decorrelation_sum, k.decorrelation_err, k.table_mass, k.lumped_mass, k.limit_p,
                  k.bound_violations);
    out << buf;
  }
  if (!a.out.empty()) {
    auto os = open_out(a.out);
    os << "t";
    for (int i = 0; i < o.d; ++i) os << ",x" << i;
    for (int i = 0; i < o.d; ++i) os << ",y" << i;
    os << ",value,stderr,bound\n";
    for (const auto& k : est)
      for (const auto& c : k.table) {
        os << k.t;
        for (int v : c.x) os << "," << v;
        for (int v : c.y) os << "," << v;
        char buf[96];
        std::snprintf(buf, sizeof buf, ",%.10g,%.4g,%.10g\n", c.value, c.stderr_, c.bound);
        os << buf;
      }
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-species coalescing random walks: simulation, walk constants and checks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(COAL_VERSION));

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "run an ensemble and write series.csv + manifest.txt");
  sim.spec.add(s);
  s->add_option("--out", sim.out_dir, "output directory (default: out_dir from the spec)");
  s->add_option("--bootstrap", sim.bootstrap, "bootstrap resamples for standard errors")->capture_default_str();

  ConstantsArgs con;
  auto* c = app.add_subcommand("constants", "escape probability and derived constants as key = value lines");
  con.rates.add(c);
  c->add_option("--method", con.method, "series or mc")->check(CLI::IsMember({"series", "mc"}))->capture_default_str();
  c->add_option("--walks", con.walks, "Monte Carlo walks")->capture_default_str();
  c->add_option("--steps", con.steps, "Monte Carlo steps per walk")->capture_default_str();
  c->add_option("--seed", con.seed)->capture_default_str();
  c->add_option("--out", con.out, "output file (default: stdout)");

  RateEqArgs re;
  auto* r = app.add_subcommand("rate-eq", "naive and modified mean-field curves as CSV");
  re.rates.add(r);
  r->add_option("--a0", re.a0)->capture_default_str();
  r->add_option("--b0", re.b0)->capture_default_str();
  r->add_option("--t-max", re.t_max)->capture_default_str();
  r->add_option("--points", re.points, "log-spaced points after t = 0")->capture_default_str();
  r->add_option("--out", re.out, "output file (default: stdout)");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "fit a series against walk constants");
  f->add_option("--series", fit.series, "series CSV from simulate")->required();
  f->add_option("--constants", fit.constants, "constants file from the constants subcommand")->required();
  f->add_option("--t-lo", fit.t_lo, "window start (default: auto)");
  f->add_option("--t-hi", fit.t_hi, "window end (default: auto)");
  f->add_option("--t-limit", fit.t_limit, "upper limit for the automatic window");
  f->add_option("--naive", fit.naive, "bare exponent lambda_B/lambda_A to test against");
  f->add_option("--species", fit.species, "a, b or both")->check(CLI::IsMember({"a", "b", "both"}));
  f->add_option("--csv", fit.csv, "also write the fits as CSV");

  NegdepArgs nd;
  auto* n = app.add_subcommand("negdep", "negative-dependence checks and the exact claim");
  nd.spec.add(n);
  n->add_option("--test", nd.test, "mixture, controls, na, tail, factorial, mz or all")
      ->check(CLI::IsMember({"mixture", "controls", "na", "tail", "factorial", "mz", "all"}))
      ->capture_default_str();
  n->add_option("--t", nd.t, "sampling time for simulated tests")->capture_default_str();
  n->add_option("--columns", nd.columns, "sites used as columns (default: min(V, 1024))");
  n->add_option("--max-n", nd.max_n, "largest N for the exact claim")->capture_default_str();
  n->add_option("--bootstrap", nd.bootstrap)->capture_default_str();
  n->add_option("--out", nd.out, "CSV report file");

  KernelArgs ke;
  auto* k = app.add_subcommand("kernels", "killed two-walker kernel and its decorrelation sum");
  ke.rates.add(k);
  k->add_option("--kind", ke.kind, "aa or b")->capture_default_str();
  k->add_option("--t", ke.times, "times (repeatable)");
  k->add_option("--paths", ke.paths)->capture_default_str();
  k->add_option("--kill-paths", ke.kill_paths)->capture_default_str();
  k->add_option("--seed", ke.seed)->capture_default_str();
  k->add_option("--out", ke.out, "CSV table of sampled cells");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << COAL_VERSION << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kUsage;
  }
  try {
    if (*s) return cmd_simulate(sim, out);
    if (*c) return cmd_constants(con, out);
    if (*r) return cmd_rate_eq(re, out);
    if (*f) return cmd_fit(fit, out);
    if (*n) return cmd_negdep(nd, out);
    if (*k) return cmd_kernels(ke, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const GuardTrip& e) {
    err << e.what() << "\n";
    return kGuard;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const BudgetError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace coal::cli

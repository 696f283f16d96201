#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "coal/errors.hpp"
#include "coal/estimator.hpp"
#include "coal/negdep.hpp"
#include "coal/rate_eq.hpp"
#include "coal/walk_constants.hpp"

namespace py = pybind11;
using namespace coal;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<double>& v) { return Array(static_cast<py::ssize_t>(v.size()), v.data()); }

SampleMatrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw UsageError("expected a 2-d array (replicas x observables)");
  SampleMatrix m(a.shape(0), a.shape(1));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (py::ssize_t j = 0; j < a.shape(1); ++j) m.at(i, j) = r(i, j);
  return m;
}

py::dict report_dict(const TestReport& r) {
  py::dict d;
  d["name"] = r.name;
  d["statistic"] = r.statistic;
  d["stderr"] = r.stderr_;
  d["ci_low"] = r.ci_low;
  d["level"] = r.level;
  d["verdict"] = std::string(to_string(r.verdict));
  d["note"] = r.note;
  return d;
}

py::dict constants_dict(const WalkConstants& c) {
  py::dict d;
  d["gamma"] = c.gamma;
  d["p_A"] = c.p_a;
  d["p_B"] = c.p_b;
  d["k_A"] = c.k_a;
  d["k_B"] = c.k_b;
  d["theta"] = c.theta;
  d["a_constant"] = c.k_a > 0 ? c.a_constant() : 0.0;
  d["gamma_err"] = c.gamma_err;
  d["theta_err"] = c.theta_err;
  return d;
}

py::dict fit_dict(const FitResult& f) {
  py::dict d;
  d["kind"] = f.kind;
  d["exponent"] = f.exponent;
  d["exponent_err"] = f.exponent_err;
  d["amplitude"] = f.amplitude;
  d["amplitude_err"] = f.amplitude_err;
  d["t_lo"] = f.t_lo;
  d["t_hi"] = f.t_hi;
  d["points"] = f.points;
  d["rms"] = f.rms;
  d["theory"] = f.theory;
  d["rel_dev"] = f.rel_dev;
  d["z_theory"] = f.z_theory;
  d["z_naive"] = f.z_naive;
  d["conclusive"] = f.conclusive;
  d["diagnostics"] = f.diagnostics;
  return d;
}

ModelParams params(double d_a, double d_b, double l_a, double l_b) {
  ModelParams p;
  p.diff_a = d_a;
  p.diff_b = d_b;
  p.instant_a = std::isinf(l_a);
  p.instant_b = std::isinf(l_b);
  p.coal_a = p.instant_a ? 1.0 : l_a;
  p.coal_b = p.instant_b ? 1.0 : l_b;
  p.validate();
  return p;
}

ExperimentSpec spec_from(const py::dict& kv) {
  ExperimentSpec s;
  KeyValues m;
  for (auto item : kv) m[py::str(item.first)] = py::str(item.second);
  apply_key_values(s, m);
  s.validate();
  return s;
}

DensitySeries series_from(const Array& t, const Array& xi, const Array& eta) {
  if (xi.ndim() != 2 || eta.ndim() != 2) throw UsageError("replica arrays must be 2-d (replicas x times)");
  std::vector<double> tv(t.data(), t.data() + t.size()), x(xi.data(), xi.data() + xi.size()),
      e(eta.data(), eta.data() + eta.size());
  return series_from_replicas(tv, x, e);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-species coalescing random walks: simulation, walk constants and dependence checks";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<BudgetError>(m, "BudgetError", PyExc_OverflowError);

  m.def(
      "gamma_escape",
      [](int d, const std::string& method, std::uint64_t walks, std::uint32_t steps, std::uint64_t seed) {
        GammaBudget b;
        b.walks = walks;
        b.steps = steps;
        b.seed = seed;
        if (method != "series" && method != "mc") throw UsageError("method must be 'series' or 'mc'");
        const auto g = gamma_escape(d, method == "mc" ? GammaMethod::MonteCarlo : GammaMethod::GreenSeries, b);
        return py::make_tuple(g.value, g.stderr_, g.bias_bound);
      },
      py::arg("d"), py::arg("method") = "series", py::arg("walks") = 200000, py::arg("steps") = 2000,
      py::arg("seed") = 1, "Escape probability as (value, stderr, truncation bias bound).");

  m.def(
      "derive_constants",
      [](double d_a, double d_b, double l_a, double l_b, int d) {
        const auto g = gamma_escape(d, GammaMethod::GreenSeries);
        return constants_dict(derive_constants(params(d_a, d_b, l_a, l_b), g.value, g.stderr_));
      },
      py::arg("D_A") = 1.0, py::arg("D_B") = 1.0, py::arg("lambda_A") = 1.0, py::arg("lambda_B") = 1.0,
      py::arg("d") = 3, "Walk-corrected constants; pass float('inf') for an instant rate.");

  m.def(
      "pair_survival",
      [](const std::string& species, double t_max, std::uint64_t n, std::uint64_t seed, double d_a, double d_b,
         double l_a, double l_b, int d) {
        if (species != "AA" && species != "AB") throw UsageError("species must be 'AA' or 'AB'");
        const auto e = pair_survival_mc(params(d_a, d_b, l_a, l_b), species == "AA" ? PairSpecies::AA : PairSpecies::AB,
                                        t_max, n, seed, d);
        return py::make_tuple(e.value, e.stderr_);
      },
      py::arg("species"), py::arg("t_max"), py::arg("n"), py::arg("seed") = 1, py::arg("D_A") = 1.0,
      py::arg("D_B") = 1.0, py::arg("lambda_A") = 1.0, py::arg("lambda_B") = 1.0, py::arg("d") = 3);

  m.def(
      "rate_eq",
      [](double a0, double b0, double ka, double kb, const Array& t, bool numeric) {
        std::vector<double> tv(t.data(), t.data() + t.size());
        if (numeric) {
          const auto s = integrate_numeric(a0, b0, ka, kb, tv);
          return py::make_tuple(to_array(s.a), to_array(s.b));
        }
        const auto sol = closed_form(a0, b0, ka, kb);
        std::vector<double> a, b;
        for (double x : tv) {
          a.push_back(sol.a(x));
          b.push_back(sol.b(x));
        }
        return py::make_tuple(to_array(a), to_array(b));
      },
      py::arg("a0"), py::arg("b0"), py::arg("k_a"), py::arg("k_b"), py::arg("t"), py::arg("numeric") = false,
      "Mean-field (a, b) on a time grid, closed form or adaptive RK4.");

  m.def(
      "simulate",
      [](const py::dict& spec) {
        const ExperimentSpec s = spec_from(spec);
        DensitySeries r;
        {
          py::gil_scoped_release nogil;
          r = measure_densities(s);
        }
        py::dict d;
        d["t"] = to_array(r.times);
        d["xi"] = to_array(r.xi);
        d["xi_err"] = to_array(r.xi_err);
        d["eta"] = to_array(r.eta);
        d["eta_err"] = to_array(r.eta_err);
        d["p_occ_a"] = to_array(r.p_occ_a);
        d["p_occ_b"] = to_array(r.p_occ_b);
        const auto R = static_cast<py::ssize_t>(r.n_replicas), T = static_cast<py::ssize_t>(r.size());
        d["rep_xi"] = Array({R, T}, r.rep_xi.data());
        d["rep_eta"] = Array({R, T}, r.rep_eta.data());
        std::ostringstream os;
        write_series_csv(os, r);
        d["csv"] = os.str();
        return d;
      },
      py::arg("spec"), "Runs an ensemble from key-value settings (same keys as the CLI config).");

  m.def(
      "site_counts",
      [](const py::dict& spec, double t, std::size_t columns) {
        const ExperimentSpec s = spec_from(spec);
        SampleMatrix mtx;
        {
          py::gil_scoped_release nogil;
          mtx = sample_site_counts(s, t, columns);
        }
        Array out({static_cast<py::ssize_t>(mtx.rows()), static_cast<py::ssize_t>(mtx.cols())});
        auto w = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < mtx.rows(); ++i)
          for (std::size_t j = 0; j < mtx.cols(); ++j) w(i, j) = mtx.at(i, j);
        return out;
      },
      py::arg("spec"), py::arg("t"), py::arg("columns"));

  m.def(
      "fit_a_constant",
      [](const Array& t, const Array& rep_xi, const Array& rep_eta, double ka, double t_lo, double t_hi) {
        WalkConstants c;
        c.k_a = ka;
        return fit_dict(fit_a_constant(series_from(t, rep_xi, rep_eta), c, t_lo, t_hi));
      },
      py::arg("t"), py::arg("rep_xi"), py::arg("rep_eta"), py::arg("k_a"), py::arg("t_lo"), py::arg("t_hi"));

  m.def(
      "fit_b_exponent",
      [](const Array& t, const Array& rep_xi, const Array& rep_eta, double theta, double t_lo, double t_hi,
         double naive) {
        WalkConstants c;
        c.k_a = 1;
        c.theta = theta;
        return fit_dict(fit_b_exponent(series_from(t, rep_xi, rep_eta), c, t_lo, t_hi, naive));
      },
      py::arg("t"), py::arg("rep_xi"), py::arg("rep_eta"), py::arg("theta"), py::arg("t_lo"), py::arg("t_hi"),
      py::arg("naive") = 0.0);

  m.def(
      "covariance_test",
      [](const Array& x, std::vector<std::size_t> f_set, std::vector<std::size_t> g_set, double level, int boot,
         std::uint64_t seed) {
        StatOptions o{level, boot, seed};
        return report_dict(na_covariance_test(to_matrix(x), f_set, g_set, monotone::sum(), monotone::sum(), o));
      },
      py::arg("x"), py::arg("f_set"), py::arg("g_set"), py::arg("level") = 0.95, py::arg("bootstrap") = 1000,
      py::arg("seed") = 1, "Cov(sum of f_set columns, sum of g_set columns) <= 0.");

  m.def(
      "tail_product_test",
      [](const Array& x, int k, int l, double level) {
        StatOptions o;
        o.level = level;
        return report_dict(tail_product_test(to_matrix(x), k, l, o));
      },
      py::arg("x"), py::arg("k") = 1, py::arg("l") = 1, py::arg("level") = 0.95);

  m.def(
      "factorial_moment_test",
      [](const Array& x, int n, double level, int boot, std::uint64_t seed) {
        StatOptions o{level, boot, seed};
        return report_dict(factorial_moment_test(to_matrix(x), n, o));
      },
      py::arg("x"), py::arg("n") = 2, py::arg("level") = 0.95, py::arg("bootstrap") = 1000, py::arg("seed") = 1);

  m.def(
      "mz_ratio_check",
      [](const Array& x, int p, std::vector<std::size_t> sizes) {
        MzOptions o;
        o.p = p;
        o.sizes = std::move(sizes);
        const auto r = mz_ratio_check(to_matrix(x), o);
        py::dict d = report_dict(r.report);
        d["sizes"] = r.sizes;
        d["ratio"] = to_array(r.ratio);
        d["ratio_err"] = to_array(r.ratio_err);
        d["slope"] = r.slope;
        d["slope_err"] = r.slope_err;
        return d;
      },
      py::arg("x"), py::arg("p") = 2, py::arg("sizes") = std::vector<std::size_t>{});

  m.def(
      "mixture",
      [](int n) {
        const auto r = mixture_bound_exact(n);
        return py::make_tuple(r.holds, r.min_value, r.argmin);
      },
      py::arg("n"), "Exact check for N <= 64: (holds, minimum as a rational string, argmin j).");

  m.def(
      "kernel",
      [](const std::string& kind, double t, std::uint64_t paths, std::uint64_t kill_paths, std::uint64_t seed,
         double d_a, double d_b, double l_a, double l_b) {
        if (kind != "aa" && kind != "b") throw UsageError("kind must be 'aa' or 'b'");
        KernelOptions o;
        o.paths = paths;
        o.kill_paths = kill_paths;
        o.seed = seed;
        KernelEstimate k;
        {
          py::gil_scoped_release nogil;
          k = kernel_mc(kind == "aa" ? KernelKind::PsiAA : KernelKind::PsiB, t, params(d_a, d_b, l_a, l_b), o);
        }
        py::dict d;
        d["decorrelation_sum"] = k.decorrelation_sum;
        d["decorrelation_err"] = k.decorrelation_err;
        d["table_mass"] = k.table_mass;
        d["lumped_mass"] = k.lumped_mass;
        d["bound_violations"] = k.bound_violations;
        d["cells"] = k.table.size();
        return d;
      },
      py::arg("kind"), py::arg("t"), py::arg("paths") = 100000, py::arg("kill_paths") = 1000000, py::arg("seed") = 1,
      py::arg("D_A") = 1.0, py::arg("D_B") = 1.0, py::arg("lambda_A") = 1.0, py::arg("lambda_B") = 1.0);
}

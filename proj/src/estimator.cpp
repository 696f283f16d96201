#include "coal/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "coal/errors.hpp"
#include "coal/stats.hpp"

namespace coal {

namespace {

struct ReplicaRows {
  std::size_t R = 0, T = 0;
  std::vector<double> xi, eta, occ_a, occ_b;
};

DensitySeries aggregate(std::span<const double> times, ReplicaRows rows, std::uint64_t seed, int bootstrap) {
  DensitySeries s;
  const std::size_t R = rows.R, T = rows.T;
  s.times.assign(times.begin(), times.end());
  s.n_replicas = R;
  auto means = [&](const std::vector<double>& v, const std::vector<std::size_t>* idx, std::vector<double>& out) {
    out.assign(T, 0.0);
    for (std::size_t i = 0; i < R; ++i) {
      const std::size_t r = idx ? (*idx)[i] : i;
      for (std::size_t k = 0; k < T; ++k) out[k] += v[r * T + k];
    }
    for (auto& x : out) x /= double(R);
  };
  means(rows.xi, nullptr, s.xi);
  means(rows.eta, nullptr, s.eta);
  if (!rows.occ_a.empty()) {
    means(rows.occ_a, nullptr, s.p_occ_a);
    means(rows.occ_b, nullptr, s.p_occ_b);
  } else {
    s.p_occ_a.assign(T, std::nan(""));
    s.p_occ_b.assign(T, std::nan(""));
  }
  s.xi_err.assign(T, 0.0);
  s.eta_err.assign(T, 0.0);
  if (R >= 2 && bootstrap > 1) {
    Bootstrap boot(R, seed);
    std::vector<std::size_t> idx;
    std::vector<double> mx, me;
    std::vector<double> sx(T, 0.0), sxx(T, 0.0), se(T, 0.0), see(T, 0.0);
    for (int b = 0; b < bootstrap; ++b) {
      boot.draw(idx);
      means(rows.xi, &idx, mx);
      means(rows.eta, &idx, me);
      for (std::size_t k = 0; k < T; ++k) {
        sx[k] += mx[k];
        sxx[k] += mx[k] * mx[k];
        se[k] += me[k];
        see[k] += me[k] * me[k];
      }
    }
    const double B = bootstrap;
    for (std::size_t k = 0; k < T; ++k) {
      s.xi_err[k] = std::sqrt(std::max(0.0, (sxx[k] - sx[k] * sx[k] / B) / (B - 1)));
      s.eta_err[k] = std::sqrt(std::max(0.0, (see[k] - se[k] * se[k] / B) / (B - 1)));
    }
  }
  s.rep_xi = std::move(rows.xi);
  s.rep_eta = std::move(rows.eta);
  return s;
}

}  // namespace

DensitySeries measure_densities(const ExperimentSpec& spec, std::uint64_t bootstrap_seed, int bootstrap) {
  spec.validate();
  const TorusGeometry geom = spec.geometry();
  const auto times = spec.measurement_times();
  ReplicaRows rows;
  rows.R = spec.replicas;
  rows.T = times.size();
  rows.xi.assign(rows.R * rows.T, 0.0);
  rows.eta = rows.occ_a = rows.occ_b = rows.xi;
  const double V = geom.volume();
  parallel_for(spec.replicas, spec.threads, [&](std::uint64_t r) {
    Configuration cfg = init_configuration(geom, spec.init, spec.seed, r);
    resolve_instant(cfg, spec.params);
    Simulator sim(geom, spec.params, std::move(cfg), spec.seed, r);
    std::size_t k = 0;
    sim.run_until(times.back(), times, [&](double, const Configuration& c) {
      double a = 0, b = 0, oa = 0, ob = 0;
      for (std::size_t x = 0; x < c.a.size(); ++x) {
        a += c.a[x];
        b += c.b[x];
        oa += c.a[x] > 0;
        ob += c.b[x] > 0;
      }
      const std::size_t at = r * rows.T + k++;
      rows.xi[at] = a / V;
      rows.eta[at] = b / V;
      rows.occ_a[at] = oa / V;
      rows.occ_b[at] = ob / V;
    });
  });
  DensitySeries s = aggregate(times, std::move(rows), bootstrap_seed, bootstrap);
  s.meta = format_spec(spec);
  return s;
}

DensitySeries series_from_replicas(std::span<const double> times, std::span<const double> rep_xi,
                                   std::span<const double> rep_eta, std::uint64_t bootstrap_seed, int bootstrap) {
  if (times.empty() || rep_xi.size() % times.size() != 0 || rep_eta.size() != rep_xi.size())
    throw UsageError("replica arrays must be replicas x times");
  ReplicaRows rows;
  rows.T = times.size();
  rows.R = rep_xi.size() / rows.T;
  rows.xi.assign(rep_xi.begin(), rep_xi.end());
  rows.eta.assign(rep_eta.begin(), rep_eta.end());
  return aggregate(times, std::move(rows), bootstrap_seed, bootstrap);
}

SampleMatrix sample_site_counts(const ExperimentSpec& spec, double t, std::size_t columns, bool species_a) {
  spec.validate();
  const TorusGeometry geom = spec.geometry();
  if (columns == 0 || columns > geom.volume()) throw UsageError("column count must lie in [1, volume]");
  if (!(t >= 0) || !std::isfinite(t)) throw UsageError("sampling time must be finite and >= 0");
  SampleMatrix m(spec.replicas, columns);
  parallel_for(spec.replicas, spec.threads, [&](std::uint64_t r) {
    Configuration cfg = init_configuration(geom, spec.init, spec.seed, r);
    resolve_instant(cfg, spec.params);
    Simulator sim(geom, spec.params, std::move(cfg), spec.seed, r);
    sim.run_until(t);
    const auto& n = species_a ? sim.config().a : sim.config().b;
    for (std::size_t c = 0; c < columns; ++c) m.at(r, c) = n[c];
  });
  return m;
}

void write_series_csv(std::ostream& os, const DensitySeries& s) {
  os << "t,xi_hat,xi_err,eta_hat,eta_err,p_occ_a,p_occ_b,n_replicas\n";
  char buf[512];
  for (std::size_t k = 0; k < s.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%llu\n", s.times[k], s.xi[k],
                  s.xi_err[k], s.eta[k], s.eta_err[k], s.p_occ_a[k], s.p_occ_b[k],
                  static_cast<unsigned long long>(s.n_replicas));
    os << buf;
  }
}

DensitySeries read_series_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw UsageError("series CSV is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) {
      col.erase(col.find_last_not_of(" \r") + 1);
      header.push_back(col);
    }
  }
  const std::vector<std::string> need{"t", "xi_hat", "xi_err", "eta_hat", "eta_err", "p_occ_a", "p_occ_b", "n_replicas"};
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < header.size(); ++i) pos[header[i]] = i;
  for (const auto& n : need)
    if (!pos.count(n)) throw UsageError("series CSV is missing column " + n);
  DensitySeries s;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (cells.size() < header.size()) throw UsageError("series CSV line " + std::to_string(lineno) + " is short");
    auto get = [&](const std::string& n) {
      try {
        return std::stod(cells[pos[n]]);
      } catch (const std::exception&) {
        throw UsageError("series CSV line " + std::to_string(lineno) + ": bad value in " + n);
      }
    };
    s.times.push_back(get("t"));
    s.xi.push_back(get("xi_hat"));
    s.xi_err.push_back(get("xi_err"));
    s.eta.push_back(get("eta_hat"));
    s.eta_err.push_back(get("eta_err"));
    s.p_occ_a.push_back(get("p_occ_a"));
    s.p_occ_b.push_back(get("p_occ_b"));
    s.n_replicas = static_cast<std::uint64_t>(get("n_replicas"));
  }
  if (s.times.empty()) throw UsageError("series CSV has no rows");
  return s;
}

std::pair<double, double> auto_window(const DensitySeries& s, double t_limit, double tol) {
  std::size_t last = 0;
  bool any = false;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (s.times[k] <= t_limit && s.xi[k] > 0) {
      last = k;
      any = true;
    }
  if (!any) return {0, 0};
  for (std::size_t k = 1; k <= last; ++k) {
    if (s.times[k - 1] <= 0 || s.xi[k - 1] <= 0 || s.xi[k] <= 0) continue;
    const double slope = (std::log(s.times[k] * s.xi[k]) - std::log(s.times[k - 1] * s.xi[k - 1])) /
                         (std::log(s.times[k]) - std::log(s.times[k - 1]));
    if (std::abs(slope) < tol && k < last) return {s.times[k - 1], s.times[last]};
  }
  return {0, 0};
}

namespace {

std::vector<std::size_t> window_indices(const DensitySeries& s, double lo, double hi) {
  std::vector<std::size_t> w;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (s.times[k] >= lo * (1 - 1e-12) && s.times[k] <= hi * (1 + 1e-12) && s.times[k] > 0) w.push_back(k);
  return w;
}

struct APoint {
  double c, expo, rms;
};

APoint fit_a_on(const std::vector<double>& t, const std::vector<double>& y, const std::vector<double>& err) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double w = err[i] > 0 ? 1.0 / (err[i] * err[i]) : 1.0;
    num += w * y[i] / t[i];
    den += w / (t[i] * t[i]);
  }
  APoint p{num / den, 0, 0};
  std::vector<double> lx(t.size()), ly(t.size()), ls(t.size());
  double ss = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    lx[i] = std::log(t[i]);
    ly[i] = std::log(y[i]);
    ls[i] = err[i] > 0 ? err[i] / y[i] : 1.0;
    const double r = ly[i] - std::log(p.c / t[i]);
    ss += r * r;
  }
  p.rms = std::sqrt(ss / double(t.size()));
  p.expo = -fit_line(lx, ly, ls).slope;
  return p;
}

// Replica bootstrap of window means; calls fn(times, means, errs) per resample.
template <class Fn>
void bootstrap_window(const DensitySeries& s, const std::vector<std::size_t>& w, const std::vector<double>& rep,
                      const std::vector<double>& err, std::uint64_t seed, int draws, Fn fn) {
  const std::size_t T = s.size();
  const std::size_t R = rep.size() / T;
  Bootstrap boot(R, seed);
  std::vector<std::size_t> idx;
  std::vector<double> tt(w.size()), m(w.size()), e(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    tt[i] = s.times[w[i]];
    e[i] = err[w[i]];
  }
  for (int b = 0; b < draws; ++b) {
    boot.draw(idx);
    std::fill(m.begin(), m.end(), 0.0);
    for (std::size_t r : idx)
      for (std::size_t i = 0; i < w.size(); ++i) m[i] += rep[r * T + w[i]];
    for (auto& v : m) v /= double(R);
    fn(tt, m, e);
  }
}

}  // namespace

FitResult fit_a_constant(const DensitySeries& s, const WalkConstants& c, double t_lo, double t_hi, std::uint64_t seed,
                         int bootstrap) {
  FitResult f;
  f.kind = "a_constant";
  f.t_lo = t_lo;
  f.t_hi = t_hi;
  f.theory = c.k_a > 0 ? c.a_constant() : 0.0;
  const auto w = window_indices(s, t_lo, t_hi);
  f.points = static_cast<int>(w.size());
  if (w.size() < 2) {
    f.conclusive = false;
    f.diagnostics = "fewer than two points in the window";
    return f;
  }
  std::vector<double> t, y, e;
  for (auto k : w) {
    if (!(s.xi[k] > 0)) {
      f.conclusive = false;
      f.diagnostics = "A density vanished inside the window";
      return f;
    }
    t.push_back(s.times[k]);
    y.push_back(s.xi[k]);
    e.push_back(s.xi_err[k]);
  }
  const APoint p = fit_a_on(t, y, e);
  f.amplitude = p.c;
  f.exponent = p.expo;
  f.rms = p.rms;
  if (s.has_replicas() && bootstrap > 1) {
    std::vector<double> cs, es;
    bootstrap_window(s, w, s.rep_xi, s.xi_err, seed, bootstrap, [&](auto& tt, auto& m, auto& ee) {
      for (double v : m)
        if (!(v > 0)) return;
      const APoint q = fit_a_on(tt, m, ee);
      cs.push_back(q.c);
      es.push_back(q.expo);
    });
    f.amplitude_err = std::sqrt(variance(cs));
    f.exponent_err = std::sqrt(variance(es));
  } else {
    double den = 0;
    for (std::size_t i = 0; i < t.size(); ++i) den += (e[i] > 0 ? 1 / (e[i] * e[i]) : 1.0) / (t[i] * t[i]);
    f.amplitude_err = 1 / std::sqrt(den);
    std::vector<double> lx, ly, ls;
    for (std::size_t i = 0; i < t.size(); ++i) {
      lx.push_back(std::log(t[i]));
      ly.push_back(std::log(y[i]));
      ls.push_back(e[i] > 0 ? e[i] / y[i] : 1.0);
    }
    f.exponent_err = fit_line(lx, ly, ls).slope_err;
  }
  if (f.theory > 0) {
    f.rel_dev = (f.amplitude - f.theory) / f.theory;
    const double comb = std::hypot(f.amplitude_err, c.k_a_err / (c.k_a * c.k_a));
    f.z_theory = comb > 0 ? (f.amplitude - f.theory) / comb : 0.0;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "plateau slope d log(t xi)/d log t = %.4f", 1.0 - f.exponent);
  f.diagnostics = buf;
  return f;
}

FitResult fit_b_exponent(const DensitySeries& s, const WalkConstants& c, double t_lo, double t_hi, double naive,
                         std::uint64_t seed, int bootstrap) {
  FitResult f;
  f.kind = "b_exponent";
  f.t_lo = t_lo;
  f.t_hi = t_hi;
  f.theory = c.theta;
  f.naive = naive;
  const auto w = window_indices(s, t_lo, t_hi);
  f.points = static_cast<int>(w.size());
  if (w.size() < 2) {
    f.conclusive = false;
    f.diagnostics = "fewer than two points in the window";
    return f;
  }
  std::vector<double> lx, ly, ls;
  for (auto k : w) {
    if (!(s.eta[k] - 2.0 * s.eta_err[k] > 0)) {
      f.conclusive = false;
      f.diagnostics = "B density consistent with zero inside the window";
      return f;
    }
    lx.push_back(std::log(s.times[k]));
    ly.push_back(std::log(s.eta[k]));
    ls.push_back(s.eta_err[k] > 0 ? s.eta_err[k] / s.eta[k] : 1.0);
  }
  const LineFit lf = fit_line(lx, ly, ls);
  f.exponent = -lf.slope;
  f.amplitude = std::exp(lf.intercept);
  f.rms = lf.rms;
  if (s.has_replicas() && bootstrap > 1) {
    std::vector<double> th, amp;
    bootstrap_window(s, w, s.rep_eta, s.eta_err, seed, bootstrap, [&](auto& tt, auto& m, auto& ee) {
      std::vector<double> x, y, sg;
      for (std::size_t i = 0; i < tt.size(); ++i) {
        if (!(m[i] > 0)) return;
        x.push_back(std::log(tt[i]));
        y.push_back(std::log(m[i]));
        sg.push_back(ee[i] > 0 ? ee[i] / m[i] : 1.0);
      }
      const LineFit b = fit_line(x, y, sg);
      th.push_back(-b.slope);
      amp.push_back(std::exp(b.intercept));
    });
    f.exponent_err = std::sqrt(variance(th));
    f.amplitude_err = std::sqrt(variance(amp));
  } else {
    f.exponent_err = lf.slope_err;
    f.amplitude_err = f.amplitude * lf.intercept_err;
  }
  if (f.theory > 0) {
    f.rel_dev = (f.exponent - f.theory) / f.theory;
    const double comb = std::hypot(f.exponent_err, c.theta_err);
    f.z_theory = comb > 0 ? (f.exponent - f.theory) / comb : 0.0;
  }
  if (naive > 0 && f.exponent_err > 0) f.z_naive = (f.exponent - naive) / f.exponent_err;
  f.diagnostics = "c_0 is fitted only; no theory value";
  return f;
}

void write_fit_text(std::ostream& os, const FitResult& f) {
  char buf[640];
  if (f.kind == "a_constant") {
    std::snprintf(buf, sizeof buf,
                  "A constant: c = %.5f +- %.5f on [%g, %g] (%d pts); theory 1/(p_A lambda_A) = %.5f; rel dev %+.2f%%, "
                  "z = %+.2f; free exponent %.4f +- %.4f; rms %.3g\n",
                  f.amplitude, f.amplitude_err, f.t_lo, f.t_hi, f.points, f.theory, 100 * f.rel_dev, f.z_theory,
                  f.exponent, f.exponent_err, f.rms);
  } else {
    std::snprintf(buf, sizeof buf,
                  "B exponent: theta_hat = %.4f +- %.4f on [%g, %g] (%d pts); theory theta = %.4f; rel dev %+.2f%%, "
                  "z = %+.2f; naive %.4f, z_naive = %+.2f; c_0 = %.4g +- %.2g; rms %.3g\n",
                  f.exponent, f.exponent_err, f.t_lo, f.t_hi, f.points, f.theory, 100 * f.rel_dev, f.z_theory, f.naive,
                  f.z_naive, f.amplitude, f.amplitude_err, f.rms);
  }
  os << buf;
  if (!f.conclusive) os << "  inconclusive: " << f.diagnostics << "\n";
}

void write_fit_csv(std::ostream& os, std::span<const FitResult> fits) {
  os << "kind,exponent,exponent_err,amplitude,amplitude_err,t_lo,t_hi,points,rms,theory,rel_dev,z_theory,naive,z_naive,"
        "conclusive\n";
  char buf[512];
  for (const auto& f : fits) {
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.6g,%.10g,%.6g,%.10g,%.10g,%d,%.6g,%.10g,%.6g,%.4f,%.10g,%.4f,%d\n",
                  f.kind.c_str(), f.exponent, f.exponent_err, f.amplitude, f.amplitude_err, f.t_lo, f.t_hi, f.points,
                  f.rms, f.theory, f.rel_dev, f.z_theory, f.naive, f.z_naive, f.conclusive ? 1 : 0);
    os << buf;
  }
}

std::uint64_t replicas_for_b(double eta_end, std::uint64_t volume, double target_rel) {
  if (!(eta_end > 0) || volume == 0 || !(target_rel > 0)) throw UsageError("replica budget needs eta > 0, V > 0");
  return static_cast<std::uint64_t>(std::ceil(1.0 / (target_rel * target_rel * double(volume) * eta_end)));
}

// ---------------------------------------------------------------------------------------------

std::vector<double> killed_difference_density(const TorusGeometry& geom, PairRates rates, double t,
                                              std::uint64_t kill_samples, std::uint64_t seed) {
  if (!(t >= 0)) throw UsageError("time must be >= 0");
  const TorusHeatKernel qt(geom, rates.walk, t);
  std::vector<double> phi = qt.table();
  if (rates.hazard <= 0 || t == 0 || kill_samples == 0) return phi;
  const auto taus = sample_kill_times(geom.dim(), rates, t, kill_samples, seed);
  constexpr int kBins = 256;
  std::vector<double> mass(kBins, 0.0), lagsum(kBins, 0.0);
  for (double tau : taus) {
    const double lag = t - tau;
    const int b = std::min(kBins - 1, static_cast<int>(std::sqrt(std::max(lag, 0.0) / t) * kBins));
    mass[b] += 1;
    lagsum[b] += lag;
  }
  for (int b = 0; b < kBins; ++b) {
    if (mass[b] == 0) continue;
    const TorusHeatKernel qb(geom, rates.walk, lagsum[b] / mass[b]);
    const double m = mass[b] / double(kill_samples);
    for (std::uint32_t r = 0; r < geom.volume(); ++r) phi[r] -= m * qb.at(r);
  }
  for (auto& v : phi) v = std::max(v, 0.0);
  return phi;
}

namespace {

struct Paired {
  std::vector<double> lhs, rhs, diff;
};

void summarise(BoundCheck& bc, const Paired& p, double level, const std::string& name) {
  bc.report.name = name;
  bc.report.level = level;
  bc.lhs = mean(p.lhs);
  bc.rhs = mean(p.rhs);
  bc.lhs_err = standard_error(p.lhs);
  bc.rhs_err = standard_error(p.rhs);
  bc.report.statistic = mean(p.diff);
  bc.report.stderr_ = standard_error(p.diff);
  bc.report.ci_low = bc.report.statistic - normal_quantile(level) * bc.report.stderr_;
  bc.report.verdict = bc.report.ci_low > 0 ? Verdict::Violation : Verdict::Consistent;
}

void check_lags(double t, double s) {
  if (!(s >= 0) || !(t >= s) || !std::isfinite(t)) throw UsageError("lemma checks need 0 <= s <= t");
}

}  // namespace

BoundCheck heat_flow_bound_check(const ExperimentSpec& spec, double t, double s, std::span<const double> f,
                                 const LemmaOptions& opt) {
  spec.validate();
  check_lags(t, s);
  const TorusGeometry geom = spec.geometry();
  if (f.size() != geom.volume()) throw UsageError("test function must have one value per site");
  double fmass = 0;
  for (double v : f) {
    if (!(v >= 0) || !std::isfinite(v)) throw UsageError("test function must be finite and >= 0");
    fmass += v;
  }
  // <xi, P_s f> summed over all translations equals <xi, 1> <P_s f, 1>
  const TorusHeatKernel ps(geom, spec.params.diff_a, s);
  const auto tab = ps.table();
  const double pf_mass = fmass * std::accumulate(tab.begin(), tab.end(), 0.0);
  const std::vector<double> times{t - s, t};
  const double V = geom.volume();
  Paired p;
  p.lhs.resize(spec.replicas);
  p.rhs.resize(spec.replicas);
  p.diff.resize(spec.replicas);
  parallel_for(spec.replicas, spec.threads, [&](std::uint64_t r) {
    Configuration cfg = init_configuration(geom, spec.init, spec.seed, r);
    resolve_instant(cfg, spec.params);
    Simulator sim(geom, spec.params, std::move(cfg), spec.seed, r);
    double at[2] = {0, 0};
    int k = 0;
    sim.run_until(t, times, [&](double, const Configuration& c) {
      at[k++] = double(std::accumulate(c.a.begin(), c.a.end(), std::uint64_t{0})) / V;
    });
    p.rhs[r] = at[0] * pf_mass;
    p.lhs[r] = at[1] * fmass;
    p.diff[r] = p.lhs[r] - p.rhs[r];
  });
  BoundCheck bc;
  summarise(bc, p, opt.level, "heat_flow(t=" + std::to_string(int(t)) + ",s=" + std::to_string(int(s)) + ")");
  bc.scale = spec.params.coal_a * fmass * s / (t * t);
  return bc;
}

TwoPointChecks two_point_bound_check(const ExperimentSpec& spec, double t, double s, const LemmaOptions& opt) {
  spec.validate();
  check_lags(t, s);
  if (spec.params.any_instant()) throw UsageError("two-point checks need finite coalescence rates");
  const TorusGeometry geom = spec.geometry();
  const int d = geom.dim();
  const auto L = static_cast<std::uint32_t>(geom.side());
  const auto phi_a = killed_difference_density(geom, pair_rates(spec.params, PairSpecies::AA), s, opt.kill_samples,
                                               derive_seed(spec.seed, 0, Stream::Aux));
  const auto phi_b = killed_difference_density(geom, pair_rates(spec.params, PairSpecies::AB), s, opt.kill_samples,
                                               derive_seed(spec.seed, 1, Stream::Aux));
  const auto q_ab = TorusHeatKernel(geom, spec.params.diff_a + spec.params.diff_b, s).table();
  const std::vector<double> times{t - s, t};
  const double V = geom.volume();
  const std::uint64_t R = spec.replicas;
  Paired aa, ab;
  std::vector<double> aa_distinct(R), ab_middle(R);
  for (auto* p : {&aa, &ab}) {
    p->lhs.resize(R);
    p->rhs.resize(R);
    p->diff.resize(R);
  }
  std::vector<double> aa_diff_distinct(R);
  parallel_for(R, spec.threads, [&](std::uint64_t r) {
    Configuration cfg = init_configuration(geom, spec.init, spec.seed, r);
    Simulator sim(geom, spec.params, std::move(cfg), spec.seed, r);
    int k = 0;
    sim.run_until(t, times, [&](double, const Configuration& c) {
      if (k++ == 0) {
        // occupied sites with coordinates, for pair sums at t - s
        struct Occ {
          std::vector<std::uint32_t> coord;
          double n;
        };
        std::vector<Occ> A, B;
        for (std::uint32_t x = 0; x < geom.volume(); ++x) {
          if (!c.a[x] && !c.b[x]) continue;
          std::vector<std::uint32_t> co(d);
          std::uint32_t rem = x;
          for (int i = 0; i < d; ++i) {
            co[i] = rem % L;
            rem /= L;
          }
          if (c.a[x]) A.push_back({co, double(c.a[x])});
          if (c.b[x]) B.push_back({co, double(c.b[x])});
        }
        auto disp = [&](const Occ& from, const Occ& to) {
          std::uint32_t idx = 0, stride = 1;
          for (int i = 0; i < d; ++i) {
            idx += ((to.coord[i] + L - from.coord[i]) % L) * stride;
            stride *= L;
          }
          return idx;
        };
        double saa = 0, self = 0;
        for (const auto& x : A) {
          for (const auto& y : A) saa += x.n * y.n * phi_a[disp(x, y)];
          self += x.n * phi_a[0];
        }
        double mid = 0, right = 0;
        for (const auto& x : A)
          for (const auto& y : B) {
            const auto dd = disp(x, y);
            mid += x.n * y.n * phi_b[dd];
            right += x.n * y.n * q_ab[dd];
          }
        aa.rhs[r] = saa / V;
        aa_distinct[r] = (saa - self) / V;
        ab_middle[r] = mid / V;
        ab.rhs[r] = right / V;
      } else {
        double f2 = 0, cross = 0;
        for (std::uint32_t x = 0; x < geom.volume(); ++x) {
          const double a = c.a[x];
          f2 += a * (a - 1);
          cross += a * c.b[x];
        }
        aa.lhs[r] = f2 / V;
        ab.lhs[r] = cross / V;
      }
    });
    aa.diff[r] = aa.lhs[r] - aa.rhs[r];
    aa_diff_distinct[r] = aa.lhs[r] - aa_distinct[r];
    ab.diff[r] = ab.lhs[r] - ab.rhs[r];
  });
  TwoPointChecks out;
  const std::string tag = "(t=" + std::to_string(int(t)) + ",s=" + std::to_string(int(s)) + ")";
  summarise(out.aa, aa, opt.level, "two_point_AA" + tag);
  out.aa.rhs_distinct = mean(aa_distinct);
  out.aa.rhs_distinct_err = standard_error(aa_distinct);
  summarise(out.ab, ab, opt.level, "two_point_AB" + tag);
  out.ab.middle = mean(ab_middle);
  return out;
}

}  // namespace coal

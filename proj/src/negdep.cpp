#include "coal/negdep.hpp"

#include <gmpxx.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <unordered_map>

#include "coal/errors.hpp"
#include "coal/rng.hpp"
#include "coal/stats.hpp"

namespace coal {

void SampleMatrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) throw UsageError("append_row: column count mismatch");
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

SampleMatrix SampleMatrix::select(std::span<const std::size_t> columns) const {
  SampleMatrix out(rows_, columns.size());
  for (std::size_t c : columns)
    if (c >= cols_) throw UsageError("select: column out of range");
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t j = 0; j < columns.size(); ++j) out.at(r, j) = at(r, columns[j]);
  return out;
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Consistent:
      return "consistent";
    case Verdict::Violation:
      return "violation";
    case Verdict::Inconclusive:
      return "inconclusive";
  }
  return "?";
}

void write_report_text(std::ostream& os, const TestReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-40s stat=%+.6g se=%.3g lower%.0f%%=%+.6g -> %s", r.name.c_str(), r.statistic,
                r.stderr_, 100 * r.level, r.ci_low, to_string(r.verdict));
  os << buf;
  if (!r.note.empty()) os << "  (" << r.note << ")";
  os << "\n";
}

void write_reports_csv(std::ostream& os, std::span<const TestReport> reports) {
  os << "name,statistic,stderr,ci_low,level,verdict,note\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, ",%.10g,%.6g,%.10g,%.4g,%s,", r.statistic, r.stderr_, r.ci_low, r.level,
                  to_string(r.verdict));
    std::string note = r.note;
    std::replace(note.begin(), note.end(), ',', ';');
    os << r.name << buf << note << "\n";
  }
}

namespace monotone {
MonotoneFn sum() {
  return [](std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x;
    return s;
  };
}
MonotoneFn min() {
  return [](std::span<const double> v) { return *std::min_element(v.begin(), v.end()); };
}
MonotoneFn max() {
  return [](std::span<const double> v) { return *std::max_element(v.begin(), v.end()); };
}
MonotoneFn all_at_least(double k) {
  return [k](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [k](double x) { return x >= k; }) ? 1.0 : 0.0;
  };
}
MonotoneFn any_at_least(double k) {
  return [k](std::span<const double> v) {
    return std::any_of(v.begin(), v.end(), [k](double x) { return x >= k; }) ? 1.0 : 0.0;
  };
}
}  // namespace monotone

namespace {

void check_level(double level) {
  if (!(level > 0.5 && level < 1.0)) throw UsageError("confidence level must lie in (0.5, 1)");
}

void decide(TestReport& r) { r.verdict = r.ci_low > 0.0 ? Verdict::Violation : Verdict::Consistent; }

}  // namespace

TestReport na_covariance_test(const SampleMatrix& s, std::span<const std::size_t> f_set,
                              std::span<const std::size_t> g_set, const MonotoneFn& f, const MonotoneFn& g,
                              const StatOptions& opt) {
  check_level(opt.level);
  if (f_set.empty() || g_set.empty()) throw UsageError("covariance test needs non-empty column sets");
  for (std::size_t a : f_set) {
    if (a >= s.cols()) throw UsageError("covariance test: column out of range");
    for (std::size_t b : g_set)
      if (a == b) throw UsageError("covariance test: column sets overlap");
  }
  for (std::size_t b : g_set)
    if (b >= s.cols()) throw UsageError("covariance test: column out of range");
  const std::size_t n = s.rows();
  TestReport rep;
  rep.name = "na_covariance";
  rep.level = opt.level;
  if (n < 3) {
    rep.note = "fewer than 3 rows";
    return rep;
  }
  std::vector<double> F(n), G(n), bf(f_set.size()), bg(g_set.size());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < f_set.size(); ++j) bf[j] = s.at(r, f_set[j]);
    for (std::size_t j = 0; j < g_set.size(); ++j) bg[j] = s.at(r, g_set[j]);
    F[r] = f(bf);
    G[r] = g(bg);
  }
  auto cov = [&](const std::vector<std::size_t>* idx) {
    double sf = 0, sg = 0, sfg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = idx ? (*idx)[i] : i;
      sf += F[r];
      sg += G[r];
      sfg += F[r] * G[r];
    }
    return (sfg - sf * sg / double(n)) / double(n - 1);
  };
  rep.statistic = cov(nullptr);
  Bootstrap boot(n, opt.seed);
  std::vector<std::size_t> idx;
  std::vector<double> reps(opt.bootstrap);
  for (auto& v : reps) {
    boot.draw(idx);
    v = cov(&idx);
  }
  rep.stderr_ = std::sqrt(variance(reps));
  rep.ci_low = percentile(reps, 1.0 - opt.level);
  decide(rep);
  return rep;
}

TestReport tail_product_test(const SampleMatrix& s, int k, int l, const StatOptions& opt) {
  check_level(opt.level);
  if (k < 1 || l < 1) throw UsageError("tail product test needs k, l >= 1");
  TestReport rep;
  rep.name = "tail_product(k=" + std::to_string(k) + ",l=" + std::to_string(l) + ")";
  rep.level = opt.level;
  const double N = double(s.rows() * s.cols());
  if (s.rows() < 2 || s.cols() == 0) {
    rep.note = "too few samples";
    return rep;
  }
  double a = 0, b = 0, c = 0;
  std::uint64_t hits = 0;
  for (std::size_t r = 0; r < s.rows(); ++r)
    for (double x : s.row(r)) {
      a += x >= k;
      b += x >= l;
      c += x >= k + l;
      hits += x >= k + l;
    }
  a /= N;
  b /= N;
  c /= N;
  // cluster-robust delta method: influence of each entry, summed per row
  double var = 0;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double psi = 0;
    for (double x : s.row(r)) psi += ((x >= k + l) - c) - b * ((x >= k) - a) - a * ((x >= l) - b);
    var += psi * psi;
  }
  rep.statistic = c - a * b;
  rep.stderr_ = std::sqrt(var) / N;
  const double z = normal_quantile(opt.level);
  rep.ci_low = rep.statistic - z * rep.stderr_;
  if (hits == 0) {
    // the left side is unresolved; rule of three bounds it by 3/N
    double var_ab = 0;
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double psi = 0;
      for (double x : s.row(r)) psi += b * ((x >= k) - a) + a * ((x >= l) - b);
      var_ab += psi * psi;
    }
    const double ab_low = a * b - z * std::sqrt(var_ab) / N;
    if (ab_low > 3.0 / N) {
      rep.verdict = Verdict::Consistent;
      rep.note = "no sample reaches k+l; product exceeds the 3/N resolution";
    } else {
      rep.verdict = Verdict::Inconclusive;
      rep.note = "empty tail";
    }
    return rep;
  }
  decide(rep);
  return rep;
}

TestReport factorial_moment_test(const SampleMatrix& s, int n, const StatOptions& opt) {
  check_level(opt.level);
  if (n < 2) throw UsageError("factorial moment test needs n >= 2");
  TestReport rep;
  rep.name = "factorial_moment(n=" + std::to_string(n) + ")";
  rep.level = opt.level;
  if (s.rows() < 3 || s.cols() == 0) {
    rep.note = "too few samples";
    return rep;
  }
  double nfact = 1;
  for (int i = 2; i <= n; ++i) nfact *= i;
  const std::size_t R = s.rows();
  std::vector<double> ff(R, 0.0), xs(R, 0.0);
  std::uint64_t reach = 0;
  for (std::size_t r = 0; r < R; ++r)
    for (double x : s.row(r)) {
      double p = 1;
      for (int i = 0; i < n; ++i) p *= (x - i);
      if (x < n) p = 0;  // integer data: the falling factorial vanishes below n
      ff[r] += p;
      xs[r] += x;
      reach += x >= n;
    }
  const double N = double(R * s.cols());
  auto stat = [&](const std::vector<std::size_t>* idx) {
    double sf = 0, sx = 0;
    for (std::size_t i = 0; i < R; ++i) {
      const std::size_t r = idx ? (*idx)[i] : i;
      sf += ff[r];
      sx += xs[r];
    }
    return sf / N - nfact * std::pow(sx / N, n);
  };
  rep.statistic = stat(nullptr);
  Bootstrap boot(R, opt.seed);
  std::vector<std::size_t> idx;
  std::vector<double> reps(opt.bootstrap);
  std::vector<double> mx(opt.bootstrap);
  for (int b = 0; b < opt.bootstrap; ++b) {
    boot.draw(idx);
    reps[b] = stat(&idx);
    double sx = 0;
    for (std::size_t r : idx) sx += xs[r];
    mx[b] = sx / N;
  }
  rep.stderr_ = std::sqrt(variance(reps));
  rep.ci_low = percentile(reps, 1.0 - opt.level);
  if (reach == 0) {
    const double m_low = percentile(mx, 1.0 - opt.level);
    if (nfact * std::pow(m_low, n) > nfact * 3.0 / N) {
      rep.verdict = Verdict::Consistent;
      rep.note = "no sample reaches n; bound exceeds the n!*3/N resolution";
    } else {
      rep.verdict = Verdict::Inconclusive;
      rep.note = "order beyond sample resolution";
    }
    return rep;
  }
  decide(rep);
  return rep;
}

double mz_ratio_iid_p2(std::size_t n, double m2, double m4) {
  const double N = double(n);
  return (N * m4 + 3 * N * (N - 1) * m2 * m2) / (N * m4 + N * (N - 1) * m2 * m2);
}

MzResult mz_ratio_check(const SampleMatrix& s, const MzOptions& opt) {
  check_level(opt.level);
  if (opt.p < 1) throw UsageError("MZ check needs p >= 1");
  MzResult res;
  res.report.name = "mz_ratio(p=" + std::to_string(opt.p) + ")";
  res.report.level = opt.level;
  const std::size_t R = s.rows(), C = s.cols();
  if (R < 4 || C < 2) {
    res.report.note = "too few rows or columns";
    return res;
  }
  res.sizes = opt.sizes;
  if (res.sizes.empty())
    for (std::size_t n = 2; n <= C; n *= 2) res.sizes.push_back(n);
  for (std::size_t n : res.sizes)
    if (n == 0 || n > C) throw UsageError("MZ size outside [1, columns]");
  if (res.sizes.size() < 2) throw UsageError("MZ check needs at least two sizes");

  // cross-fitted centring
  const std::size_t half = R / 2;
  std::vector<double> m1(C, 0.0), m2(C, 0.0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) (r < half ? m1 : m2)[c] += s.at(r, c);
  for (std::size_t c = 0; c < C; ++c) {
    m1[c] /= double(half);
    m2[c] /= double(R - half);
  }
  const std::size_t K = res.sizes.size();
  std::vector<double> num(R * K), den(R * K);
  for (std::size_t r = 0; r < R; ++r) {
    const auto& mu = r < half ? m2 : m1;
    double S = 0, Q = 0;
    std::size_t next = 0;
    for (std::size_t c = 0; c < C && next < K; ++c) {
      const double x = s.at(r, c) - mu[c];
      S += x;
      Q += x * x;
      while (next < K && res.sizes[next] == c + 1) {
        num[r * K + next] = std::pow(std::abs(S), 2 * opt.p);
        den[r * K + next] = std::pow(Q, opt.p);
        ++next;
      }
    }
  }
  std::vector<double> logn(K);
  for (std::size_t k = 0; k < K; ++k) logn[k] = std::log(double(res.sizes[k]));
  auto ratios = [&](const std::vector<std::size_t>* idx, std::vector<double>& out) {
    out.assign(K, 0.0);
    std::vector<double> dsum(K, 0.0);
    for (std::size_t i = 0; i < R; ++i) {
      const std::size_t r = idx ? (*idx)[i] : i;
      for (std::size_t k = 0; k < K; ++k) {
        out[k] += num[r * K + k];
        dsum[k] += den[r * K + k];
      }
    }
    for (std::size_t k = 0; k < K; ++k) out[k] = dsum[k] > 0 ? out[k] / dsum[k] : std::nan("");
  };
  ratios(nullptr, res.ratio);
  for (double v : res.ratio)
    if (!std::isfinite(v)) {
      res.report.note = "degenerate column block";
      return res;
    }
  res.slope = fit_line(logn, res.ratio).slope;
  Bootstrap boot(R, opt.seed);
  std::vector<std::size_t> idx;
  std::vector<double> slopes;
  std::vector<std::vector<double>> per_k(K);
  std::vector<double> rb;
  for (int b = 0; b < opt.bootstrap; ++b) {
    boot.draw(idx);
    ratios(&idx, rb);
    bool ok = true;
    for (double v : rb) ok = ok && std::isfinite(v);
    if (!ok) continue;
    slopes.push_back(fit_line(logn, rb).slope);
    for (std::size_t k = 0; k < K; ++k) per_k[k].push_back(rb[k]);
  }
  res.ratio_err.resize(K);
  for (std::size_t k = 0; k < K; ++k) res.ratio_err[k] = std::sqrt(variance(per_k[k]));
  if (slopes.size() < 10) {
    res.report.note = "bootstrap failed";
    return res;
  }
  res.slope_err = std::sqrt(variance(slopes));
  res.report.statistic = res.slope;
  res.report.stderr_ = res.slope_err;
  res.report.ci_low = res.slope - normal_quantile(opt.level) * res.slope_err;
  decide(res.report);
  char buf[96];
  std::snprintf(buf, sizeof buf, "R(%zu)=%.4f R(%zu)=%.4f", res.sizes.front(), res.ratio.front(), res.sizes.back(),
                res.ratio.back());
  res.report.note = buf;
  return res;
}

MixtureBoundResult mixture_bound_exact(int n, int max_n) {
  if (n < 1) throw UsageError("claim check needs N >= 1");
  if (n > max_n) throw BudgetError("N = " + std::to_string(n) + " exceeds the exact-arithmetic budget " + std::to_string(max_n));
  // 4(N+1) P[sum = j] = 4 C(N,j) sum_K K^j (N-K)^(N-j) / N^N, with 0^0 = 1
  mpz_class denom;
  mpz_ui_pow_ui(denom.get_mpz_t(), n, n);
  mpq_class best;
  int arg = -1;
  for (int j = 0; j <= n; ++j) {
    mpz_class s = 0, t1, t2, binom;
    for (int K = 0; K <= n; ++K) {
      mpz_ui_pow_ui(t1.get_mpz_t(), K, j);
      mpz_ui_pow_ui(t2.get_mpz_t(), n - K, n - j);
      s += t1 * t2;
    }
    mpz_bin_uiui(binom.get_mpz_t(), n, j);
    mpq_class v(4 * binom * s, denom);
    v.canonicalize();
    if (arg < 0 || v < best) {
      best = v;
      arg = j;
    }
  }
  MixtureBoundResult r;
  r.n = n;
  r.min_value = best.get_str();
  r.min_value_double = best.get_d();
  r.argmin = arg;
  r.holds = best >= 1;
  return r;
}

// ---------------------------------------------------------------------------------------------

ColourChainResult colour_chain_run(const ColourChainSpec& spec) {
  if (spec.dim < 1 || spec.half_width < 0 || spec.colours < 1 || spec.steps_per_unit < 1 || !(spec.t_end >= 0))
    throw UsageError("colour chain: invalid geometry or time parameters");
  if (!(spec.diff >= 0) || !(spec.coal >= 0) || !(spec.init_mean >= 0) || spec.init_mean > spec.colours)
    throw UsageError("colour chain: invalid rates or initial mean");
  const int side = 2 * spec.half_width + 1;
  const int K = spec.colours;
  const int d = spec.dim;
  std::uint64_t V = 1;
  for (int i = 0; i < d; ++i) V *= side;
  if (V * K > (1u << 28)) throw BudgetError("colour chain: too many (site, colour) cells");
  const double h = 1.0 / spec.steps_per_unit;
  const double p_move = h * spec.diff / (2.0 * d * K);        // per direction and target colour
  const double p_recolour = h * spec.coal;                    // per other colour (rate K lambda_A / K)
  const double p_act = 2.0 * d * K * p_move + (K - 1) * p_recolour;
  if (p_act > 1.0) throw UsageError("colour chain: time step too coarse (action probability exceeds 1)");

  ColourChainResult res;
  res.sites = static_cast<std::uint32_t>(V);
  res.steps = static_cast<int>(std::llround(spec.t_end * spec.steps_per_unit));
  const std::uint32_t cells = static_cast<std::uint32_t>(V * K);
  std::vector<std::uint8_t> occ(cells, 0), next(cells, 0);
  Rng rng = make_rng(spec.seed, 0, Stream::Aux);
  if (!spec.initial_cells.empty()) {
    for (auto [site, k] : spec.initial_cells) {
      if (site >= V || k < 0 || k >= K) throw UsageError("colour chain: initial cell out of range");
      occ[site * K + k] = 1;
    }
  } else {
    Rng init = make_rng(spec.seed, 0, Stream::InitA);
    const double q = spec.init_mean / K;
    for (auto& o : occ) o = uniform01(init) < q;
  }
  std::vector<std::uint32_t> stride(d);
  stride[0] = 1;
  for (int i = 1; i < d; ++i) stride[i] = stride[i - 1] * side;

  // paths follow the action drawn for the cell they occupy
  std::vector<std::uint32_t> where;
  if (spec.record_paths) {
    for (std::uint32_t c = 0; c < cells; ++c)
      if (occ[c]) where.push_back(c);
    res.paths.assign(where.size(), {});
    for (std::size_t i = 0; i < where.size(); ++i) res.paths[i].push_back(where[i]);
  }
  std::unordered_map<std::uint32_t, std::uint32_t> dest;
  for (int step = 0; step < res.steps; ++step) {
    std::fill(next.begin(), next.end(), 0);
    dest.clear();
    for (std::uint32_t c = 0; c < cells; ++c) {
      if (!occ[c]) continue;
      const std::uint32_t site = c / K;
      const int k = static_cast<int>(c % K);
      std::uint32_t target = c;
      double u = uniform01(rng);
      if (u < 2.0 * d * K * p_move) {
        const auto opt = static_cast<std::uint32_t>(u / p_move);
        const int dir = static_cast<int>(std::min<std::uint32_t>(opt / K, 2 * d - 1));
        const int l = static_cast<int>(opt % K);
        const int axis = dir >> 1;
        const int coord = static_cast<int>((site / stride[axis]) % side);
        const int nc = coord + ((dir & 1) ? -1 : 1);
        std::int64_t ns = site;
        if (nc < 0 || nc >= side) {
          if (spec.periodic) {
            ns += (nc < 0 ? std::int64_t(side - 1) : -std::int64_t(side - 1)) * stride[axis];
            target = static_cast<std::uint32_t>(ns) * K + l;
          }  // otherwise suppressed
        } else {
          ns += (nc - coord) * std::int64_t(stride[axis]);
          target = static_cast<std::uint32_t>(ns) * K + l;
        }
      } else if ((u -= 2.0 * d * K * p_move) < (K - 1) * p_recolour) {
        int l = static_cast<int>(u / p_recolour);
        l = std::min(l, K - 2);
        if (l >= k) ++l;
        target = site * K + l;
      }
      next[target] = 1;
      if (spec.record_paths) dest[c] = target;
    }
    occ.swap(next);
    if (spec.record_paths)
      for (std::size_t i = 0; i < where.size(); ++i) {
        where[i] = dest.at(where[i]);
        res.paths[i].push_back(where[i]);
      }
  }
  res.xi.assign(V, 0);
  for (std::uint32_t c = 0; c < cells; ++c) res.xi[c / K] += occ[c];
  return res;
}

bool paths_coalesce(const ColourChainResult& r) {
  const std::size_t n = r.paths.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = r.paths[i];
      const auto& b = r.paths[j];
      bool met = false;
      for (std::size_t t = 0; t < a.size(); ++t) {
        if (a[t] == b[t]) met = true;
        else if (met) return false;
      }
    }
  return true;
}

}  // namespace coal

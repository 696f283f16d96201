#include "coal/walk_constants.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "coal/errors.hpp"
#include "coal/rng.hpp"
#include "coal/stats.hpp"

namespace coal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> log_factorials(std::uint32_t n) {
  std::vector<double> lf(n + 1, 0.0);
  for (std::uint32_t i = 1; i <= n; ++i) lf[i] = lf[i - 1] + std::log(double(i));
  return lf;
}

// P[S_n = 0] for n = 0..n_max. Axis-split recursion: the number of steps along the last axis is
// Binomial(n, 1/k) given k axes, so R_k(n) = sum_j Bin(n,1/k)(j) R_1(j) R_{k-1}(n-j), with
// R_1(j) = C(j, j/2) 2^-j. Only a +-14 sigma window of j contributes at double precision.
std::vector<double> compute_returns(int d, std::uint32_t n_max) {
  const auto lf = log_factorials(n_max);
  std::vector<double> r1(n_max + 1, 0.0);
  for (std::uint32_t j = 0; j <= n_max; j += 2)
    r1[j] = std::exp(lf[j] - 2.0 * lf[j / 2] - double(j) * std::log(2.0));
  std::vector<double> prev = r1;
  for (int k = 2; k <= d; ++k) {
    std::vector<double> cur(n_max + 1, 0.0);
    const double q = 1.0 / k;
    const double lq = std::log(q), lp = std::log1p(-q);
    for (std::uint32_t n = 0; n <= n_max; n += 2) {
      const double mean = n * q;
      const double width = 14.0 * std::sqrt(n * q * (1 - q)) + 4.0;
      auto lo = static_cast<std::int64_t>(std::floor(mean - width));
      auto hi = static_cast<std::int64_t>(std::ceil(mean + width));
      lo = std::max<std::int64_t>(lo, 0);
      hi = std::min<std::int64_t>(hi, n);
      if (lo & 1) ++lo;
      double s = 0.0;
      for (std::int64_t j = lo; j <= hi; j += 2) {
        const double lb = lf[n] - lf[j] - lf[n - j] + j * lq + (double(n) - j) * lp;
        s += std::exp(lb) * r1[j] * prev[n - j];
      }
      cur[n] = s;
    }
    prev.swap(cur);
  }
  return prev;
}

struct SeriesCache {
  std::mutex mu;
  std::map<int, std::vector<double>> returns;
  std::map<int, std::vector<double>> first;
};

SeriesCache& cache() {
  static SeriesCache c;
  return c;
}

}  // namespace

const std::vector<double>& return_probabilities(int d, std::uint32_t n_max) {
  if (d < 1) throw UsageError("dimension must be >= 1");
  auto& c = cache();
  std::lock_guard<std::mutex> lock(c.mu);
  auto& v = c.returns[d];
  if (v.size() < std::size_t(n_max) + 1) v = compute_returns(d, n_max);
  return v;
}

const std::vector<double>& first_return_probabilities(int d, std::uint32_t n_max) {
  const auto& P = return_probabilities(d, n_max);
  auto& c = cache();
  std::lock_guard<std::mutex> lock(c.mu);
  auto& f = c.first[d];
  if (f.size() < std::size_t(n_max) + 1) {
    f.assign(n_max + 1, 0.0);
    for (std::uint32_t n = 2; n <= n_max; n += 2) {
      double s = P[n];
      for (std::uint32_t k = 2; k < n; k += 2) s -= f[k] * P[n - k];
      f[n] = std::max(s, 0.0);
    }
  }
  return f;
}

double truncated_escape(int d, std::uint32_t steps) {
  const auto& f = first_return_probabilities(d, steps);
  double s = 0.0;
  for (std::uint32_t k = 0; k <= steps; ++k) s += f[k];
  return 1.0 - s;
}

namespace {

// Green function G = sum_n P_n with the tail removed by fitting partial sums at N/8, N/4, N/2, N
// to G - a N^(1-d/2) - b N^(-d/2) - c N^(-1-d/2).
std::pair<double, double> green_function(int d, std::uint32_t terms) {
  terms &= ~1u;
  const auto& P = return_probabilities(d, terms);
  std::array<std::uint32_t, 4> ns{terms / 8, terms / 4, terms / 2, terms};
  for (auto& n : ns) n &= ~1u;
  std::array<double, 4> partial{};
  double s = 0.0;
  std::size_t which = 0;
  for (std::uint32_t n = 0; n <= terms; n += 2) {
    s += P[n];
    while (which < 4 && ns[which] == n) partial[which++] = s;
  }
  const double e0 = 1.0 - d / 2.0;
  auto solve = [&](int m) {
    // m unknowns: G and m-1 tail coefficients, using the last m partial sums
    std::vector<std::vector<double>> A(m, std::vector<double>(m + 1));
    for (int i = 0; i < m; ++i) {
      const double n = ns[4 - m + i];
      A[i][0] = 1.0;
      for (int k = 1; k < m; ++k) A[i][k] = -std::pow(n, e0 - (k - 1));
      A[i][m] = partial[4 - m + i];
    }
    for (int c = 0; c < m; ++c) {
      int piv = c;
      for (int r = c + 1; r < m; ++r)
        if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
      std::swap(A[c], A[piv]);
      for (int r = 0; r < m; ++r) {
        if (r == c) continue;
        const double f = A[r][c] / A[c][c];
        for (int k = c; k <= m; ++k) A[r][k] -= f * A[c][k];
      }
    }
    return A[0][m] / A[0][0];
  };
  const double g4 = solve(4);
  const double g3 = solve(3);
  return {g4, std::abs(g4 - g3)};
}

}  // namespace

GammaEstimate gamma_escape(int d, GammaMethod method, const GammaBudget& budget) {
  if (d < 1) throw UsageError("dimension must be >= 1");
  GammaEstimate est;
  est.method = method;
  if (method == GammaMethod::GreenSeries) {
    if (d <= 2) throw NumericalError("Green series diverges for d <= 2 (the walk is recurrent)");
    if (budget.series_terms < 64) throw UsageError("series_terms must be >= 64");
    const auto [g, gerr] = green_function(d, budget.series_terms);
    est.value = 1.0 / g;
    est.stderr_ = gerr / (g * g);
    return est;
  }
  if (budget.walks == 0 || budget.steps == 0) throw UsageError("Monte Carlo gamma needs walks > 0 and steps > 0");
  Rng rng = make_rng(budget.seed, 0, Stream::Aux);
  std::vector<int> pos(d);
  std::uint64_t escaped = 0;
  const auto deg = static_cast<std::uint32_t>(2 * d);
  for (std::uint64_t w = 0; w < budget.walks; ++w) {
    std::fill(pos.begin(), pos.end(), 0);
    int nonzero = 0;
    bool returned = false;
    for (std::uint32_t s = 0; s < budget.steps; ++s) {
      const std::uint32_t dir = uniform_index(rng, deg);
      int& c = pos[dir >> 1];
      const int before = c;
      c += (dir & 1) ? -1 : 1;
      nonzero += (before == 0) - (c == 0);
      if (nonzero == 0) {
        returned = true;
        break;
      }
    }
    escaped += !returned;
  }
  const double n = double(budget.walks);
  est.value = escaped / n;
  est.stderr_ = std::sqrt(std::max(est.value * (1 - est.value), 1.0 / n) / n);
  if (d >= 3) {
    // f_k <= P_k, so the missed late returns weigh at most the Green tail beyond the horizon
    const std::uint32_t terms = std::max<std::uint32_t>(budget.series_terms, 4 * budget.steps);
    const auto& P = return_probabilities(d, terms);
    const auto [g, gerr] = green_function(d, terms);
    double head = 0.0;
    for (std::uint32_t k = 0; k <= budget.steps; ++k) head += P[k];
    est.bias_bound = std::max(0.0, g - head) + gerr;
  } else {
    est.bias_bound = 1.0;  // recurrent: no useful bound
  }
  return est;
}

// ---------------------------------------------------------------------------------------------

WalkConstants derive_constants(const ModelParams& p, double gamma, double gamma_err, GammaMethod method) {
  p.validate();
  if (!(gamma > 0.0 && gamma < 1.0)) throw UsageError("gamma must lie in (0, 1)");
  WalkConstants c;
  c.gamma = gamma;
  c.gamma_err = gamma_err;
  c.method = method;
  const double ra = p.diff_a;
  const double rb = p.diff_a + p.diff_b;
  // p = g r / (g r + lam); k = p lam = g r lam / (g r + lam)
  if (p.instant_a) {
    c.p_a = 0.0;
    c.k_a = gamma * ra;
    c.k_a_err = ra * gamma_err;
  } else {
    const double den = gamma * ra + p.coal_a;
    c.p_a = den > 0 ? gamma * ra / den : 1.0;
    c.p_a_err = den > 0 ? ra * p.coal_a / (den * den) * gamma_err : 0.0;
    c.k_a = c.p_a * p.coal_a;
    c.k_a_err = c.p_a_err * p.coal_a;
  }
  if (p.instant_b) {
    c.p_b = 0.0;
    c.k_b = gamma * rb;
    c.k_b_err = rb * gamma_err;
  } else {
    const double den = gamma * rb + p.coal_b;
    c.p_b = den > 0 ? gamma * rb / den : 1.0;
    c.p_b_err = den > 0 ? rb * p.coal_b / (den * den) * gamma_err : 0.0;
    c.k_b = c.p_b * p.coal_b;
    c.k_b_err = c.p_b_err * p.coal_b;
  }
  if (!(c.k_a > 0.0)) throw NumericalError("effective A constant is zero; theta undefined (need D_A > 0 and lambda_A > 0)");
  c.theta = c.k_b / c.k_a;
  // d theta / d gamma, by a centred difference of the closed forms
  if (gamma_err > 0.0) {
    const double h = std::min(1e-6, 0.5 * std::min(gamma, 1.0 - gamma));
    auto th = [&](double g) {
      const double ka = p.instant_a ? g * ra : g * ra * p.coal_a / (g * ra + p.coal_a);
      const double kb = p.instant_b ? g * rb : g * rb * p.coal_b / (g * rb + p.coal_b);
      return kb / ka;
    };
    c.theta_err = std::abs(th(gamma + h) - th(gamma - h)) / (2 * h) * gamma_err;
  }
  return c;
}

void write_constants(std::ostream& os, const WalkConstants& c) {
  auto line = [&](const char* name, double v, double e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s = %.12g \xC2\xB1 %.6g\n", name, v, e);
    os << buf;
  };
  os << "# method = " << (c.method == GammaMethod::GreenSeries ? "green-series" : "monte-carlo") << "\n";
  line("gamma", c.gamma, c.gamma_err);
  line("p_A", c.p_a, c.p_a_err);
  line("p_B", c.p_b, c.p_b_err);
  line("k_A", c.k_a, c.k_a_err);
  line("k_B", c.k_b, c.k_b_err);
  line("theta", c.theta, c.theta_err);
  line("a_constant", c.a_constant(), c.k_a_err / (c.k_a * c.k_a));
}

std::string format_constants(const WalkConstants& c) {
  std::ostringstream os;
  write_constants(os, c);
  return os.str();
}

WalkConstants parse_constants(std::istream& is) {
  std::map<std::string, std::pair<double, double>> kv;
  std::string line;
  std::string method;
  while (std::getline(is, line)) {
    if (line.rfind("# method = ", 0) == 0) method = line.substr(11);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("constants file: malformed line '" + line + "'");
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    key.erase(0, key.find_first_not_of(" \t"));
    std::string rest = line.substr(eq + 1);
    const auto pm = rest.find("\xC2\xB1");
    double v = 0, e = 0;
    try {
      v = std::stod(rest.substr(0, pm));
      if (pm != std::string::npos) e = std::stod(rest.substr(pm + 2));
    } catch (const std::exception&) {
      throw UsageError("constants file: bad number in line '" + line + "'");
    }
    kv[key] = {v, e};
  }
  for (const char* need : {"theta", "k_A"})
    if (!kv.count(need)) throw UsageError(std::string("constants file: missing key ") + need);
  WalkConstants c;
  auto get = [&](const char* k, double& v, double& e) {
    if (auto it = kv.find(k); it != kv.end()) {
      v = it->second.first;
      e = it->second.second;
    }
  };
  get("gamma", c.gamma, c.gamma_err);
  get("p_A", c.p_a, c.p_a_err);
  get("p_B", c.p_b, c.p_b_err);
  get("k_A", c.k_a, c.k_a_err);
  get("k_B", c.k_b, c.k_b_err);
  get("theta", c.theta, c.theta_err);
  c.method = method == "monte-carlo" ? GammaMethod::MonteCarlo : GammaMethod::GreenSeries;
  return c;
}

// ---------------------------------------------------------------------------------------------

PairRates pair_rates(const ModelParams& p, PairSpecies species) {
  if (species == PairSpecies::AA) return {2.0 * p.diff_a, 2.0 * p.coal_a};
  return {p.diff_a + p.diff_b, p.coal_b};
}

namespace {

// Excursion sampler for the difference walk: at the origin it holds Exp(walk + hazard) and is
// killed with probability hazard / (walk + hazard); otherwise the excursion returns after k steps
// with probability f_k and lasts Gamma(k - 1, walk).
class KillTimeSampler {
 public:
  KillTimeSampler(int d, PairRates r, double t_max) : rates_(r), t_max_(t_max) {
    const double m = r.walk * t_max;
    horizon_ = static_cast<std::uint32_t>(std::ceil(m + 8.0 * std::sqrt(m) + 64.0));
    horizon_ += horizon_ & 1u;
    const auto& f = first_return_probabilities(d, horizon_);
    cdf_.resize(horizon_ + 1);
    double s = 0.0;
    for (std::uint32_t k = 0; k <= horizon_; ++k) cdf_[k] = (s += f[k]);
  }

  // Killing time, or +inf if the pair survives past t_max.
  double sample(Rng& rng) const {
    if (rates_.hazard <= 0.0) return kInf;
    if (rates_.walk <= 0.0) {
      const double t = standard_exponential(rng) / rates_.hazard;
      return t <= t_max_ ? t : kInf;
    }
    const double total = rates_.walk + rates_.hazard;
    double t = 0.0;
    for (;;) {
      t += standard_exponential(rng) / total;
      if (t > t_max_) return kInf;
      if (uniform01(rng) * total < rates_.hazard) return t;
      const double u = uniform01(rng);
      if (u >= cdf_.back()) return kInf;  // no return within the horizon, which outlasts t_max
      const auto k = static_cast<std::uint32_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
      std::gamma_distribution<double> g(double(k - 1), 1.0 / rates_.walk);
      t += g(rng);
      if (t > t_max_) return kInf;
    }
  }

 private:
  PairRates rates_;
  double t_max_;
  std::uint32_t horizon_ = 0;
  std::vector<double> cdf_;
};

ProbabilityEstimate binomial_estimate(std::uint64_t alive, std::uint64_t n) {
  ProbabilityEstimate e;
  e.samples = n;
  e.value = double(alive) / double(n);
  e.stderr_ = std::sqrt(e.value * (1.0 - e.value) / double(n));
  return e;
}

// One continuous-time walker pair; returns true if the contact clock never rang by t_max.
bool two_walker_survives(Rng& rng, int d, double rate_x, double rate_y, double hazard, double t_max,
                         std::vector<int>& x, std::vector<int>& y, double* local_time = nullptr) {
  const double total = rate_x + rate_y;
  const auto deg = static_cast<std::uint32_t>(2 * d);
  double clock = standard_exponential(rng);  // hazard budget in units of hazard * local time
  double t = 0.0;
  double ell = 0.0;
  bool together = x == y;
  for (;;) {
    const double dt = total > 0 ? standard_exponential(rng) / total : kInf;
    const double t_next = std::min(t + dt, t_max);
    if (together) {
      const double need = hazard > 0 ? clock / hazard : kInf;
      if (need <= t_next - t) {
        if (local_time) *local_time = ell + need;
        return false;
      }
      clock -= hazard * (t_next - t);
      ell += t_next - t;
    }
    if (t + dt >= t_max) break;
    t += dt;
    auto& who = uniform01(rng) * total < rate_x ? x : y;
    const std::uint32_t dir = uniform_index(rng, deg);
    who[dir >> 1] += (dir & 1) ? -1 : 1;
    together = x == y;
  }
  if (local_time) *local_time = ell;
  return true;
}

}  // namespace

ProbabilityEstimate pair_survival_mc(const ModelParams& p, PairSpecies species, double t_max, std::uint64_t n,
                                     std::uint64_t seed, int d, PairMethod method) {
  p.validate();
  if (n == 0) throw UsageError("pair_survival_mc needs at least one sample");
  if (!(t_max >= 0.0) || !std::isfinite(t_max)) throw UsageError("t_max must be finite and >= 0");
  if (d < 1) throw UsageError("dimension must be >= 1");
  if ((species == PairSpecies::AA && p.instant_a) || (species == PairSpecies::AB && p.instant_b))
    return binomial_estimate(0, n);
  const PairRates r = pair_rates(p, species);
  Rng rng = make_rng(seed, 0, Stream::Aux);
  std::uint64_t alive = 0;
  switch (method) {
    case PairMethod::Excursion: {
      if (d < 3 && r.walk * t_max > 1e6) throw BudgetError("excursion table too large for a recurrent walk");
      KillTimeSampler sampler(d, r, t_max);
      for (std::uint64_t i = 0; i < n; ++i) alive += sampler.sample(rng) == kInf;
      break;
    }
    case PairMethod::DifferenceWalk: {
      std::vector<int> x(d), origin(d, 0);
      for (std::uint64_t i = 0; i < n; ++i) {
        std::fill(x.begin(), x.end(), 0);
        alive += two_walker_survives(rng, d, r.walk, 0.0, r.hazard, t_max, x, origin);
      }
      break;
    }
    case PairMethod::TwoWalkers: {
      const double rx = p.diff_a;
      const double ry = species == PairSpecies::AA ? p.diff_a : p.diff_b;
      std::vector<int> x(d), y(d);
      for (std::uint64_t i = 0; i < n; ++i) {
        std::fill(x.begin(), x.end(), 0);
        std::fill(y.begin(), y.end(), 0);
        alive += two_walker_survives(rng, d, rx, ry, r.hazard, t_max, x, y);
      }
      break;
    }
  }
  return binomial_estimate(alive, n);
}

std::vector<double> sample_kill_times(int d, PairRates rates, double t_max, std::uint64_t n, std::uint64_t seed) {
  if (!(t_max >= 0.0) || !std::isfinite(t_max)) throw UsageError("t_max must be finite and >= 0");
  KillTimeSampler sampler(d, rates, t_max);
  Rng rng = make_rng(seed, 0, Stream::Aux);
  std::vector<double> out;
  for (std::uint64_t i = 0; i < n; ++i)
    if (const double tau = sampler.sample(rng); tau != kInf) out.push_back(tau);
  return out;
}

// ---------------------------------------------------------------------------------------------

std::vector<double> zd_axis_density(double rate, double t, int d, int x_max) {
  if (x_max < 0) throw UsageError("x_max must be >= 0");
  const double mu = rate * t / d;
  std::vector<double> out(x_max + 1, 0.0);
  if (mu == 0.0) {
    out[0] = 1.0;
    return out;
  }
  if (mu < 600.0) {
    const double e = std::exp(-mu);
    for (int x = 0; x <= x_max; ++x) out[x] = e * std::cyl_bessel_i(double(x), mu);
    return out;
  }
  // large mu: a cycle much longer than the spread gives the same values to double precision
  const int side = 2 * (x_max + static_cast<int>(40.0 * std::sqrt(mu)) + 64);
  const auto ring = torus_axis_density(rate, t, d, side);
  for (int x = 0; x <= x_max; ++x) out[x] = ring[x];
  return out;
}

std::vector<double> torus_axis_density(double rate, double t, int d, int side) {
  if (side < 2) throw UsageError("side must be >= 2");
  const double mu = rate * t / d;
  std::vector<double> eig(side);
  const double w = 2.0 * M_PI / side;
  for (int k = 0; k < side; ++k) eig[k] = std::exp(-mu * (1.0 - std::cos(w * k)));
  std::vector<double> out(side);
  for (int x = 0; x < side; ++x) {
    double s = 0.0;
    for (int k = 0; k < side; ++k) s += eig[k] * std::cos(w * ((std::int64_t(k) * x) % side));
    out[x] = std::max(0.0, s / side);
  }
  return out;
}

TorusHeatKernel::TorusHeatKernel(const TorusGeometry& geom, double rate, double t)
    : geom_(geom), axis_(torus_axis_density(rate, t, geom.dim(), geom.side())) {}

double TorusHeatKernel::at(std::uint32_t delta) const {
  double v = 1.0;
  const auto L = static_cast<std::uint32_t>(geom_.side());
  for (int i = 0; i < geom_.dim(); ++i) {
    v *= axis_[delta % L];
    delta /= L;
  }
  return v;
}

std::vector<double> TorusHeatKernel::table() const {
  std::vector<double> out(geom_.volume());
  for (std::uint32_t s = 0; s < geom_.volume(); ++s) out[s] = at(s);
  return out;
}

// ---------------------------------------------------------------------------------------------

namespace {

struct CellKey {
  std::vector<int> xy;
  bool operator==(const CellKey&) const = default;
};
struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (int v : k.xy) h = splitmix64(h ^ static_cast<std::uint32_t>(v));
    return h;
  }
};

// sum_r |(1 - F) q_t(r - r0) ... | evaluated over the first orthant with multiplicities; r0 = 0.
double decorrelation_from_histogram(const std::vector<double>& mass, const std::vector<double>& lag,
                                    double escape, const PairRates& r, double t, int d) {
  // S(r) = (1 - p) q_t(r) - sum_b mass_b q_{lag_b}(r)
  const double mu = r.walk * t / d;
  const int R = static_cast<int>(std::ceil(10.0 * std::sqrt(mu) + 10.0));
  const auto qt = zd_axis_density(r.walk, t, d, R);
  std::vector<std::vector<double>> qb;
  std::vector<double> mb;
  for (std::size_t b = 0; b < mass.size(); ++b) {
    if (mass[b] == 0.0) continue;
    qb.push_back(zd_axis_density(r.walk, lag[b], d, R));
    mb.push_back(mass[b]);
  }
  const double lead = 1.0 - escape;
  std::vector<int> idx(d, 0);
  std::vector<double> prod_b(qb.size());
  double total = 0.0;
  for (;;) {
    double q = 1.0;
    int nz = 0;
    for (int i = 0; i < d; ++i) {
      q *= qt[idx[i]];
      nz += idx[i] != 0;
    }
    double s = lead * q;
    for (std::size_t b = 0; b < qb.size(); ++b) {
      double v = mb[b];
      for (int i = 0; i < d; ++i) v *= qb[b][idx[i]];
      s -= v;
    }
    total += std::ldexp(std::abs(s), nz);
    int i = 0;
    while (i < d && ++idx[i] > R) idx[i++] = 0;
    if (i == d) break;
  }
  return total;
}

}  // namespace

KernelEstimate kernel_mc(KernelKind kind, double t, const ModelParams& p, const KernelOptions& opt) {
  p.validate();
  if (!(t >= 0.0) || !std::isfinite(t)) throw UsageError("kernel time must be finite and >= 0");
  const int d = opt.d;
  if (d < 1) throw UsageError("dimension must be >= 1");
  if ((kind == KernelKind::PsiAA && p.instant_a) || (kind == KernelKind::PsiB && p.instant_b))
    throw UsageError("kernel_mc needs a finite contact hazard");
  std::vector<int> a = opt.start_a.empty() ? std::vector<int>(d, 0) : opt.start_a;
  std::vector<int> b = opt.start_b.empty() ? std::vector<int>(d, 0) : opt.start_b;
  if (int(a.size()) != d || int(b.size()) != d) throw UsageError("kernel start points must have d coordinates");

  const PairSpecies species = kind == KernelKind::PsiAA ? PairSpecies::AA : PairSpecies::AB;
  const PairRates pr = pair_rates(p, species);
  const double rx = p.diff_a;
  const double ry = kind == KernelKind::PsiAA ? p.diff_a : p.diff_b;

  KernelEstimate est;
  est.t = t;
  est.kind = kind;
  est.paths = opt.paths;
  {
    const GammaEstimate g = gamma_escape(std::max(d, 3), GammaMethod::GreenSeries);
    const double gr = g.value * pr.walk;
    est.limit_p = gr + pr.hazard > 0 ? gr / (gr + pr.hazard) : 1.0;
  }

  // explicit walkers for the pair table
  const int box_x = static_cast<int>(std::ceil(6.0 * std::sqrt(rx * t)));
  const int box_y = static_cast<int>(std::ceil(6.0 * std::sqrt(ry * t)));
  std::unordered_map<CellKey, std::pair<double, double>, CellHash> cells;
  Rng rng = make_rng(opt.seed, 0, Stream::Aux);
  std::vector<int> x(d), y(d);
  for (std::uint64_t i = 0; i < opt.paths; ++i) {
    x = a;
    y = b;
    double ell = 0.0;
    // hazard 0 here: the walkers run to t and the killing enters through the weight
    two_walker_survives(rng, d, rx, ry, 0.0, t, x, y, &ell);
    const double w = std::exp(-pr.hazard * ell);
    bool inside = true;
    for (int k = 0; k < d; ++k) inside = inside && std::abs(x[k] - a[k]) <= box_x && std::abs(y[k] - b[k]) <= box_y;
    if (!inside) {
      est.lumped_mass += w;
      continue;
    }
    CellKey key;
    key.xy.reserve(2 * d);
    key.xy.insert(key.xy.end(), x.begin(), x.end());
    key.xy.insert(key.xy.end(), y.begin(), y.end());
    auto& acc = cells[key];
    acc.first += w;
    acc.second += w * w;
  }
  const double n = double(std::max<std::uint64_t>(opt.paths, 1));
  est.lumped_mass /= n;
  const int rmax = std::max(box_x, box_y) + 1 + [&] {
    int m = 0;
    for (int k = 0; k < d; ++k) m = std::max({m, std::abs(a[k]), std::abs(b[k])});
    return m;
  }();
  const auto da = zd_axis_density(rx, t, d, 2 * rmax);
  const auto db = zd_axis_density(ry, t, d, 2 * rmax);
  for (const auto& [key, acc] : cells) {
    KernelCell c;
    c.x.assign(key.xy.begin(), key.xy.begin() + d);
    c.y.assign(key.xy.begin() + d, key.xy.end());
    c.value = acc.first / n;
    const double var = std::max(acc.second / n - c.value * c.value, 0.0);
    c.stderr_ = std::sqrt(var / n);
    double bound = 1.0;
    for (int k = 0; k < d; ++k) bound *= da[std::abs(c.x[k] - a[k])] * db[std::abs(c.y[k] - b[k])];
    c.bound = bound;
    est.table_mass += c.value;
    est.table.push_back(std::move(c));
  }
  // family-wise 95% over all sampled cells (Bonferroni)
  const double z = cells.empty() ? 0.0 : normal_quantile(1.0 - 0.05 / double(cells.size()));
  for (const auto& c : est.table)
    if (c.value - z * c.stderr_ > c.bound) ++est.bound_violations;
  std::sort(est.table.begin(), est.table.end(), [](const KernelCell& l, const KernelCell& r) {
    return std::tie(l.x, l.y) < std::tie(r.x, r.y);
  });

  // decorrelation sum in the difference coordinate from sampled killing times
  if (a == b && t > 0.0 && opt.kill_paths > 0) {
    est.kill_paths = opt.kill_paths;
    KillTimeSampler sampler(d, pr, t);
    constexpr int kBins = 256;
    constexpr int kBatches = 10;
    std::vector<std::vector<double>> mass(kBatches, std::vector<double>(kBins, 0.0));
    std::vector<std::vector<double>> lagsum(kBatches, std::vector<double>(kBins, 0.0));
    Rng krng = make_rng(opt.seed, 1, Stream::Aux);
    const std::uint64_t per = opt.kill_paths / kBatches;
    for (int bt = 0; bt < kBatches; ++bt) {
      for (std::uint64_t i = 0; i < per; ++i) {
        const double tau = sampler.sample(krng);
        if (tau == kInf) continue;
        const double lag = t - tau;
        const int bin = std::min(kBins - 1, static_cast<int>(std::sqrt(lag / t) * kBins));
        mass[bt][bin] += 1.0;
        lagsum[bt][bin] += lag;
      }
    }
    std::vector<double> all_mass(kBins, 0.0), all_lag(kBins, 0.0), lag(kBins);
    for (int bt = 0; bt < kBatches; ++bt)
      for (int k = 0; k < kBins; ++k) {
        all_mass[k] += mass[bt][k];
        all_lag[k] += lagsum[bt][k];
      }
    for (int k = 0; k < kBins; ++k) {
      lag[k] = all_mass[k] > 0 ? all_lag[k] / all_mass[k] : 0.0;
      all_mass[k] /= double(per * kBatches);
    }
    est.decorrelation_sum = decorrelation_from_histogram(all_mass, lag, est.limit_p, pr, t, d);
    std::vector<double> batch(kBatches);
    for (int bt = 0; bt < kBatches; ++bt) {
      std::vector<double> m(kBins);
      for (int k = 0; k < kBins; ++k) m[k] = mass[bt][k] / double(per);
      batch[bt] = decorrelation_from_histogram(m, lag, est.limit_p, pr, t, d);
    }
    const double mean = std::accumulate(batch.begin(), batch.end(), 0.0) / kBatches;
    double ss = 0.0;
    for (double v : batch) ss += (v - mean) * (v - mean);
    est.decorrelation_err = std::sqrt(ss / (kBatches - 1) / kBatches);
  }
  return est;
}

}  // namespace coal

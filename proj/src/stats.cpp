#include "coal/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numeric>

#include "coal/errors.hpp"

namespace coal {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw UsageError("normal quantile needs p in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
}

double variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / double(x.size() - 1);
}

double standard_error(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  return std::sqrt(variance(x) / double(x.size()));
}

double percentile(std::vector<double> x, double q) {
  if (x.empty()) throw UsageError("percentile of an empty sample");
  std::sort(x.begin(), x.end());
  const double pos = q * double(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - double(lo)) * (x[hi] - x[lo]);
}

void Bootstrap::draw(std::vector<std::size_t>& idx) {
  idx.resize(n_);
  for (auto& i : idx) i = uniform_index(rng_, static_cast<std::uint32_t>(n_));
}

LineFit fit_line(std::span<const double> x, std::span<const double> y, std::span<const double> sigma) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n || (!sigma.empty() && sigma.size() != n))
    throw UsageError("fit_line needs at least two points of matching length");
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = sigma.empty() ? 1.0 : 1.0 / (sigma[i] * sigma[i]);
    if (!std::isfinite(w)) throw NumericalError("fit_line: zero or invalid uncertainty");
    sw += w;
    sx += w * x[i];
    sy += w * y[i];
    sxx += w * x[i] * x[i];
    sxy += w * x[i] * y[i];
  }
  const double det = sw * sxx - sx * sx;
  if (!(det > 0)) throw NumericalError("fit_line: degenerate abscissae");
  LineFit f;
  f.slope = (sw * sxy - sx * sy) / det;
  f.intercept = (sxx * sy - sx * sxy) / det;
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    ss += r * r;
  }
  f.rms = std::sqrt(ss / double(n));
  if (sigma.empty()) {
    const double s2 = n > 2 ? ss / double(n - 2) : 0.0;
    f.slope_err = std::sqrt(s2 * sw / det);
    f.intercept_err = std::sqrt(s2 * sxx / det);
  } else {
    f.slope_err = std::sqrt(sw / det);
    f.intercept_err = std::sqrt(sxx / det);
  }
  return f;
}

}  // namespace coal

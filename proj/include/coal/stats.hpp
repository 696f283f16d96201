#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "coal/rng.hpp"

namespace coal {

/// Standard normal quantile and upper tail.
double normal_quantile(double p);
double normal_upper_tail(double z);

double mean(std::span<const double> x);
/// Unbiased sample variance (0 for fewer than two values).
double variance(std::span<const double> x);
double standard_error(std::span<const double> x);

/// Percentile (linear interpolation between order statistics) of an unsorted sample.
double percentile(std::vector<double> x, double q);

/// Bootstrap resampling indices: `draws` resamples of n rows, using a dedicated stream.
class Bootstrap {
 public:
  Bootstrap(std::size_t n, std::uint64_t seed) : n_(n), rng_(make_rng(seed, 0, Stream::Aux)) {}
  /// Fills `idx` with n row indices drawn with replacement.
  void draw(std::vector<std::size_t>& idx);

 private:
  std::size_t n_;
  Rng rng_;
};

/// Weighted least squares for y = a + b x. Returns (a, b, se_a, se_b, cov_ab) with weights 1/sigma^2.
struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double intercept_err = 0.0;
  double slope_err = 0.0;
  double rms = 0.0;  // unweighted residual RMS
};
LineFit fit_line(std::span<const double> x, std::span<const double> y, std::span<const double> sigma = {});

}  // namespace coal

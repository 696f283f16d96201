#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "coal/rng.hpp"

namespace coal {

/// Periodic hypercubic lattice (Z/LZ)^d. Sites are encoded mixed-radix with axis 0 fastest.
class TorusGeometry {
 public:
  TorusGeometry(int dim, int side);

  int dim() const { return dim_; }
  int side() const { return side_; }
  std::uint32_t volume() const { return volume_; }
  int degree() const { return 2 * dim_; }

  std::uint32_t stride(int axis) const { return strides_[axis]; }

  std::vector<int> coords(std::uint32_t site) const;
  std::uint32_t site(std::span<const int> coords) const;

  /// Wrapped nearest neighbour along `axis` in direction `sign` (+1 or -1).
  std::uint32_t neighbor(std::uint32_t site, int axis, int sign) const;

  /// Unchecked neighbour by direction index in [0, 2d): even = +axis, odd = -axis.
  std::uint32_t step(std::uint32_t site, int direction) const {
    const int axis = direction >> 1;
    const std::uint32_t s = strides_[axis];
    const std::uint32_t c = (site / s) % static_cast<std::uint32_t>(side_);
    if (direction & 1) return c == 0 ? site + s * (side_ - 1) : site - s;
    return c + 1 == static_cast<std::uint32_t>(side_) ? site - s * (side_ - 1) : site + s;
  }

  /// Site reached from `site` by adding the (possibly negative) displacement, with wrap.
  std::uint32_t translate(std::uint32_t site, std::span<const int> displacement) const;

  /// Minimal-image displacement component in [-L/2, L/2).
  int wrap_delta(int delta) const;

  bool operator==(const TorusGeometry& other) const {
    return dim_ == other.dim_ && side_ == other.side_;
  }

 private:
  int dim_;
  int side_;
  std::uint32_t volume_;
  std::vector<std::uint32_t> strides_;
};

/// Occupation counts of both species plus the clock.
struct Configuration {
  std::vector<std::uint32_t> a;
  std::vector<std::uint32_t> b;
  double time = 0.0;

  explicit Configuration(std::uint32_t volume = 0) : a(volume, 0), b(volume, 0) {}

  std::uint64_t total_a() const;
  std::uint64_t total_b() const;
};

enum class InitKind { Poisson, Deterministic, Bernoulli };

/// Per-site i.i.d. initial law; species are independent.
struct InitSpec {
  InitKind kind = InitKind::Poisson;
  double param_a = 1.0;  // mean (Poisson), count (Deterministic), probability (Bernoulli)
  double param_b = 1.0;

  static InitSpec poisson(double mu_a, double mu_b) { return {InitKind::Poisson, mu_a, mu_b}; }
  static InitSpec deterministic(std::uint32_t n_a, std::uint32_t n_b) {
    return {InitKind::Deterministic, static_cast<double>(n_a), static_cast<double>(n_b)};
  }
  static InitSpec bernoulli(double p_a, double p_b) { return {InitKind::Bernoulli, p_a, p_b}; }

  /// Throws UsageError for negative parameters, Bernoulli p outside [0,1], or non-integral counts.
  void validate() const;
  double mean_a() const;
  double mean_b() const;
};

/// Draws an i.i.d. configuration. Species A uses `rng_a`, species B uses `rng_b`, so the A field is
/// identical whether or not B is present.
Configuration init_configuration(const TorusGeometry& geom, const InitSpec& spec, Rng& rng_a,
                                 Rng& rng_b);

/// Convenience overload deriving both init streams from (seed, replica).
Configuration init_configuration(const TorusGeometry& geom, const InitSpec& spec,
                                 std::uint64_t seed, std::uint64_t replica = 0);

}  // namespace coal

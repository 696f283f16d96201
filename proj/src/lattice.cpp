#include "coal/lattice.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "coal/errors.hpp"

namespace coal {

TorusGeometry::TorusGeometry(int dim, int side) : dim_(dim), side_(side), volume_(1) {
  if (dim < 1) throw UsageError("lattice dimension must be >= 1");
  if (side < 2) throw UsageError("lattice side must be >= 2");
  strides_.resize(dim);
  std::uint64_t v = 1;
  for (int i = 0; i < dim; ++i) {
    strides_[i] = static_cast<std::uint32_t>(v);
    v *= static_cast<std::uint64_t>(side);
    if (v > (std::uint64_t{1} << 31)) throw UsageError("lattice volume exceeds 2^31 sites");
  }
  volume_ = static_cast<std::uint32_t>(v);
}

std::vector<int> TorusGeometry::coords(std::uint32_t site) const {
  if (site >= volume_) throw UsageError("site index out of range");
  std::vector<int> c(dim_);
  for (int i = 0; i < dim_; ++i) {
    c[i] = static_cast<int>(site % side_);
    site /= side_;
  }
  return c;
}

std::uint32_t TorusGeometry::site(std::span<const int> c) const {
  if (static_cast<int>(c.size()) != dim_) throw UsageError("coordinate arity does not match dimension");
  std::uint32_t s = 0;
  for (int i = dim_ - 1; i >= 0; --i) {
    if (c[i] < 0 || c[i] >= side_) throw UsageError("coordinate out of range");
    s = s * side_ + static_cast<std::uint32_t>(c[i]);
  }
  return s;
}

std::uint32_t TorusGeometry::neighbor(std::uint32_t site, int axis, int sign) const {
  if (axis < 0 || axis >= dim_) throw UsageError("axis " + std::to_string(axis) + " out of range");
  if (sign != 1 && sign != -1) throw UsageError("sign must be +1 or -1");
  if (site >= volume_) throw UsageError("site index out of range");
  return step(site, 2 * axis + (sign < 0 ? 1 : 0));
}

std::uint32_t TorusGeometry::translate(std::uint32_t site, std::span<const int> displacement) const {
  if (static_cast<int>(displacement.size()) != dim_) throw UsageError("displacement arity mismatch");
  std::uint32_t out = 0;
  std::uint32_t rest = site;
  for (int i = 0; i < dim_; ++i) {
    const int c = static_cast<int>(rest % side_);
    rest /= side_;
    int m = (c + displacement[i]) % side_;
    if (m < 0) m += side_;
    out += static_cast<std::uint32_t>(m) * strides_[i];
  }
  return out;
}

int TorusGeometry::wrap_delta(int delta) const {
  int m = delta % side_;
  if (m < 0) m += side_;
  if (2 * m >= side_) m -= side_;
  return m;
}

std::uint64_t Configuration::total_a() const { return std::accumulate(a.begin(), a.end(), std::uint64_t{0}); }
std::uint64_t Configuration::total_b() const { return std::accumulate(b.begin(), b.end(), std::uint64_t{0}); }

void InitSpec::validate() const {
  for (double p : {param_a, param_b}) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw UsageError("initial-condition parameters must be finite and >= 0");
    if (kind == InitKind::Bernoulli && p > 1.0) throw UsageError("Bernoulli probability must lie in [0,1]");
    if (kind == InitKind::Deterministic && p != std::floor(p))
      throw UsageError("deterministic occupation must be an integer");
  }
}

double InitSpec::mean_a() const { return param_a; }
double InitSpec::mean_b() const { return param_b; }

namespace {

void fill_species(std::vector<std::uint32_t>& out, InitKind kind, double param, Rng& rng) {
  switch (kind) {
    case InitKind::Deterministic:
      std::fill(out.begin(), out.end(), static_cast<std::uint32_t>(param));
      break;
    case InitKind::Poisson: {
      if (param == 0.0) {
        std::fill(out.begin(), out.end(), 0u);
        break;
      }
      std::poisson_distribution<std::uint32_t> dist(param);
      for (auto& n : out) n = dist(rng);
      break;
    }
    case InitKind::Bernoulli:
      for (auto& n : out) n = uniform01(rng) < param ? 1u : 0u;
      break;
  }
}

}  // namespace

Configuration init_configuration(const TorusGeometry& geom, const InitSpec& spec, Rng& rng_a, Rng& rng_b) {
  spec.validate();
  Configuration cfg(geom.volume());
  fill_species(cfg.a, spec.kind, spec.param_a, rng_a);
  fill_species(cfg.b, spec.kind, spec.param_b, rng_b);
  return cfg;
}

Configuration init_configuration(const TorusGeometry& geom, const InitSpec& spec, std::uint64_t seed,
                                 std::uint64_t replica) {
  Rng ra = make_rng(seed, replica, Stream::InitA);
  Rng rb = make_rng(seed, replica, Stream::InitB);
  return init_configuration(geom, spec, ra, rb);
}

}  // namespace coal

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "coal/dynamics.hpp"
#include "coal/lattice.hpp"

namespace coal {

/// Everything needed to reproduce an ensemble: geometry, rates, initial law, measurement grid,
/// replica count and base seed.
struct ExperimentSpec {
  int dim = 3;
  int side = 32;
  ModelParams params;
  InitSpec init = InitSpec::poisson(1.0, 1.0);
  double t0 = 1.0;
  double ratio = 1.25;
  int n_points = 20;
  std::vector<double> times;  // explicit grid; overrides (t0, ratio, n_points) when non-empty
  std::uint64_t replicas = 1;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  bool override_guard = false;
  std::string out_dir = ".";

  TorusGeometry geometry() const { return TorusGeometry(dim, side); }
  /// Sorted measurement times.
  std::vector<double> measurement_times() const;
  double t_max() const;
  /// Largest t with sqrt(2 d max(D) t) <= L/4 (infinity when nothing moves).
  double finite_size_limit() const;
  bool guard_ok() const { return t_max() <= finite_size_limit(); }
  /// Throws UsageError on invalid values; does not check the finite-size guard.
  void validate() const;
};

/// Flat `key = value` text; '#' starts a comment. Unknown keys are a UsageError.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::istream& is);
/// Applies key-value settings on top of `spec`.
void apply_key_values(ExperimentSpec& spec, const KeyValues& kv);
/// Canonical key-value form (round-trips through parse + apply).
std::string format_spec(const ExperimentSpec& spec);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions are rethrown on the caller
/// (the first by index).
void parallel_for(std::uint64_t n, unsigned threads, const std::function<void(std::uint64_t)>& fn);

}  // namespace coal

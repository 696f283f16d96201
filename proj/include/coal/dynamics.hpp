#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "coal/lattice.hpp"
#include "coal/rng.hpp"

namespace coal {

/// Jump and reaction rates. A particles jump at total rate diff_a (diff_a / 2d per neighbour),
/// each unordered AA pair on a site coalesces at rate 2 coal_a, each AB pair at rate coal_b.
/// An instant flag replaces the corresponding finite rate by immediate coalescence on contact.
struct ModelParams {
  double diff_a = 1.0;
  double diff_b = 1.0;
  double coal_a = 1.0;
  double coal_b = 1.0;
  bool instant_a = false;
  bool instant_b = false;

  void validate() const;
  bool any_instant() const { return instant_a || instant_b; }
};

struct SiteRates {
  double walk_a = 0.0;
  double walk_b = 0.0;
  double coal_aa = 0.0;
  double coal_ab = 0.0;

  double total_a() const { return walk_a + coal_aa; }
  double total_b() const { return walk_b + coal_ab; }
  double total() const { return total_a() + total_b(); }
};

/// Channel rates at one site. Channels of a species flagged instant are zero: they are resolved at
/// arrival time instead of being sampled.
SiteRates site_rates(std::uint32_t n_a, std::uint32_t n_b, const ModelParams& p);

/// Fenwick (binary indexed) tree over non-negative per-site rates with O(log V) update and
/// prefix search.
class RateIndex {
 public:
  explicit RateIndex(std::size_t size = 0);

  std::size_t size() const { return leaf_.size(); }
  void set(std::size_t i, double rate);
  double rate(std::size_t i) const { return leaf_[i]; }
  double total() const { return tree_.empty() ? 0.0 : tree_[capacity_]; }

  /// Index i with prefix(i) <= u < prefix(i+1), skipping zero-rate leaves; u in [0, total()).
  std::size_t find(double u) const;

  /// Sum of leaves recomputed from scratch.
  double recomputed_total() const;
  /// Rebuilds internal sums from the leaves in O(V); removes accumulated rounding drift.
  void rebuild();

 private:
  std::vector<double> leaf_;
  std::vector<double> tree_;  // 1-based, length capacity_ + 1
  std::size_t capacity_ = 0;  // power of two >= size
};

enum class EventKind : std::uint8_t { WalkA, WalkB, CoalAA, CoalAB };

struct EventRecord {
  double time;
  std::uint32_t site;
  EventKind kind;
};

/// Callback observing the state at a measurement time.
using MeasureHook = std::function<void(double time, const Configuration& cfg)>;

/// Makes a configuration admissible for instant coalescence at time zero: merges co-located A
/// particles (instant_a) and removes B particles sharing a site with an A (instant_b).
void resolve_instant(Configuration& cfg, const ModelParams& p);

/// Exact event-driven simulation of the two-species coalescing system on a torus.
///
/// Species A and B are driven by separate random streams and separate rate indices. Because A
/// never depends on B, the A trajectory is a function of the A stream alone; the B clock is a
/// residual unit-exponential hazard that is rescaled whenever an A event changes the B rates.
class Simulator {
 public:
  Simulator(const TorusGeometry& geom, const ModelParams& params, Configuration cfg, Rng rng_a, Rng rng_b);
  Simulator(const TorusGeometry& geom, const ModelParams& params, Configuration cfg, std::uint64_t seed,
            std::uint64_t replica = 0);

  const Configuration& config() const { return cfg_; }
  const TorusGeometry& geometry() const { return geom_; }
  const ModelParams& params() const { return params_; }
  double time() const { return cfg_.time; }

  /// Time of the next event (infinity once absorbed).
  double next_event_time() const;
  bool absorbed() const;

  /// Applies the next event and advances the clock. Returns false (and changes nothing) when no
  /// event can ever fire.
  bool step();

  /// Runs until the clock reaches t_end or the system is absorbed. `hook` is invoked once per
  /// entry of `measure_times` (sorted, within [time(), t_end]) with the state in force at that time.
  void run_until(double t_end, std::span<const double> measure_times = {}, const MeasureHook& hook = {});

  std::uint64_t total_a() const { return total_a_; }
  std::uint64_t total_b() const { return total_b_; }
  std::uint64_t occupied_a() const { return occupied_a_; }
  std::uint64_t occupied_b() const { return occupied_b_; }
  std::uint64_t events() const { return events_; }

  void enable_event_log(bool on) { log_enabled_ = on; }
  const std::vector<EventRecord>& event_log() const { return log_; }

  /// Maximum relative gap between maintained and recomputed index totals.
  double index_drift() const;
  const RateIndex& index_a() const { return index_a_; }
  const RateIndex& index_b() const { return index_b_; }

  /// Throws ConsistencyError if an instant-mode invariant or a cached total is violated.
  void check_invariants() const;

  static constexpr std::uint64_t kRebuildInterval = std::uint64_t{1} << 20;

 private:
  void refresh_site(std::uint32_t site);
  void draw_a_clock();
  void consume_b_hazard(double now);
  void project_b();
  void add_a(std::uint32_t site);
  void remove_a(std::uint32_t site);
  void add_b(std::uint32_t site);
  void remove_b(std::uint32_t site, std::uint32_t count = 1);
  void apply_a_event();
  void apply_b_event();
  void arrive_a(std::uint32_t site);
  void arrive_b(std::uint32_t site);
  void log(std::uint32_t site, EventKind kind);

  TorusGeometry geom_;
  ModelParams params_;
  Configuration cfg_;
  Rng rng_a_;
  Rng rng_b_;
  RateIndex index_a_;
  RateIndex index_b_;

  double next_a_ = 0.0;          // absolute time of next A event
  double hazard_b_ = 0.0;        // remaining unit-exponential hazard for the next B event
  double next_b_ = 0.0;          // absolute time of next B event

  std::uint64_t total_a_ = 0;
  std::uint64_t total_b_ = 0;
  std::uint64_t occupied_a_ = 0;
  std::uint64_t occupied_b_ = 0;
  std::uint64_t events_ = 0;
  std::uint64_t events_a_ = 0;  // rebuild schedules are per species so A never sees B
  std::uint64_t events_b_ = 0;

  bool log_enabled_ = false;
  std::vector<EventRecord> log_;
};

}  // namespace coal

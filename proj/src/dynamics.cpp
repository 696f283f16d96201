#include "coal/dynamics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "coal/errors.hpp"

namespace coal {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void ModelParams::validate() const {
  for (double r : {diff_a, diff_b, coal_a, coal_b}) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw UsageError("rates must be finite and >= 0 (use instant flags for infinity)");
  }
}

SiteRates site_rates(std::uint32_t n_a, std::uint32_t n_b, const ModelParams& p) {
  SiteRates r;
  const double na = n_a;
  const double nb = n_b;
  r.walk_a = p.diff_a * na;
  r.walk_b = p.diff_b * nb;
  r.coal_aa = (p.instant_a || n_a < 2) ? 0.0 : p.coal_a * na * (na - 1.0);
  r.coal_ab = p.instant_b ? 0.0 : p.coal_b * na * nb;
  return r;
}

// ---------------------------------------------------------------------------------------------
// RateIndex

RateIndex::RateIndex(std::size_t size) : leaf_(size, 0.0) {
  capacity_ = size == 0 ? 0 : std::bit_ceil(size);
  tree_.assign(capacity_ + 1, 0.0);
}

void RateIndex::set(std::size_t i, double rate) {
  const double delta = rate - leaf_[i];
  if (delta == 0.0) return;
  leaf_[i] = rate;
  for (std::size_t j = i + 1; j <= capacity_; j += j & (~j + 1)) tree_[j] += delta;
}

std::size_t RateIndex::find(double u) const {
  std::size_t pos = 0;
  for (std::size_t step = capacity_; step > 0; step >>= 1) {
    const std::size_t next = pos + step;
    if (next <= capacity_ && tree_[next] <= u) {
      u -= tree_[next];
      pos = next;
    }
  }
  return pos;  // may equal size() or land on a zero leaf under rounding drift; callers check
}

double RateIndex::recomputed_total() const {
  double s = 0.0;
  for (double r : leaf_) s += r;
  return s;
}

void RateIndex::rebuild() {
  std::fill(tree_.begin(), tree_.end(), 0.0);
  for (std::size_t i = 0; i < leaf_.size(); ++i) tree_[i + 1] = leaf_[i];
  for (std::size_t j = 1; j <= capacity_; ++j) {
    const std::size_t parent = j + (j & (~j + 1));
    if (parent <= capacity_) tree_[parent] += tree_[j];
  }
}

// ---------------------------------------------------------------------------------------------

void resolve_instant(Configuration& cfg, const ModelParams& p) {
  for (std::size_t x = 0; x < cfg.a.size(); ++x) {
    if (p.instant_a && cfg.a[x] > 1) cfg.a[x] = 1;
    if (p.instant_b && cfg.a[x] > 0) cfg.b[x] = 0;
  }
}

Simulator::Simulator(const TorusGeometry& geom, const ModelParams& params, Configuration cfg, Rng rng_a, Rng rng_b)
    : geom_(geom),
      params_(params),
      cfg_(std::move(cfg)),
      rng_a_(rng_a),
      rng_b_(rng_b),
      index_a_(geom.volume()),
      index_b_(geom.volume()) {
  params_.validate();
  if (cfg_.a.size() != geom_.volume() || cfg_.b.size() != geom_.volume())
    throw UsageError("configuration size does not match lattice volume");
  if (!(cfg_.time >= 0.0)) throw UsageError("configuration time must be >= 0");
  for (std::uint32_t x = 0; x < geom_.volume(); ++x) {
    const auto na = cfg_.a[x];
    const auto nb = cfg_.b[x];
    if ((params_.instant_a && na > 1) || (params_.instant_b && na > 0 && nb > 0))
      throw ConsistencyError("initial configuration violates the instant-coalescence invariant at site " +
                             std::to_string(x));
    total_a_ += na;
    total_b_ += nb;
    occupied_a_ += na > 0;
    occupied_b_ += nb > 0;
    const SiteRates r = site_rates(na, nb, params_);
    index_a_.set(x, r.total_a());
    index_b_.set(x, r.total_b());
  }
  index_a_.rebuild();
  index_b_.rebuild();
  draw_a_clock();
  hazard_b_ = standard_exponential(rng_b_);
  project_b();
}

Simulator::Simulator(const TorusGeometry& geom, const ModelParams& params, Configuration cfg, std::uint64_t seed,
                     std::uint64_t replica)
    : Simulator(geom, params, std::move(cfg), make_rng(seed, replica, Stream::EventsA),
                make_rng(seed, replica, Stream::EventsB)) {}

double Simulator::next_event_time() const { return std::min(next_a_, next_b_); }

bool Simulator::absorbed() const { return next_a_ == kInf && next_b_ == kInf; }

void Simulator::draw_a_clock() {
  const double ra = index_a_.total();
  next_a_ = ra > 0.0 ? cfg_.time + standard_exponential(rng_a_) / ra : kInf;
}

void Simulator::consume_b_hazard(double now) {
  if (next_b_ != kInf) hazard_b_ = std::max(0.0, hazard_b_ - index_b_.total() * (now - cfg_.time));
  cfg_.time = now;
}

void Simulator::project_b() {
  const double rb = index_b_.total();
  next_b_ = rb > 0.0 ? cfg_.time + hazard_b_ / rb : kInf;
}

void Simulator::refresh_site(std::uint32_t site) {
  const SiteRates r = site_rates(cfg_.a[site], cfg_.b[site], params_);
  index_a_.set(site, r.total_a());
  index_b_.set(site, r.total_b());
}

void Simulator::add_a(std::uint32_t site) {
  occupied_a_ += cfg_.a[site] == 0;
  ++cfg_.a[site];
  ++total_a_;
}

void Simulator::remove_a(std::uint32_t site) {
  --cfg_.a[site];
  --total_a_;
  occupied_a_ -= cfg_.a[site] == 0;
}

void Simulator::add_b(std::uint32_t site) {
  occupied_b_ += cfg_.b[site] == 0;
  ++cfg_.b[site];
  ++total_b_;
}

void Simulator::remove_b(std::uint32_t site, std::uint32_t count) {
  cfg_.b[site] -= count;
  total_b_ -= count;
  occupied_b_ -= cfg_.b[site] == 0;
}

void Simulator::arrive_a(std::uint32_t site) {
  if (params_.instant_a && cfg_.a[site] > 0) {
    // merges with the resident A
  } else {
    add_a(site);
  }
  if (params_.instant_b && cfg_.b[site] > 0) remove_b(site, cfg_.b[site]);
}

void Simulator::arrive_b(std::uint32_t site) {
  if (params_.instant_b && cfg_.a[site] > 0) return;  // absorbed on contact
  add_b(site);
}

void Simulator::log(std::uint32_t site, EventKind kind) {
  if (log_enabled_) log_.push_back({cfg_.time, site, kind});
}

void Simulator::apply_a_event() {
  std::size_t x = index_a_.find(uniform01(rng_a_) * index_a_.total());
  if (x >= index_a_.size() || index_a_.rate(x) <= 0.0) {
    index_a_.rebuild();
    x = index_a_.find(uniform01(rng_a_) * index_a_.total());
    if (x >= index_a_.size() || index_a_.rate(x) <= 0.0) throw ConsistencyError("A rate index selected an inactive site");
  }
  const auto site = static_cast<std::uint32_t>(x);
  const SiteRates r = site_rates(cfg_.a[site], cfg_.b[site], params_);
  if (uniform01(rng_a_) * r.total_a() < r.walk_a) {
    const auto y = geom_.step(site, static_cast<int>(uniform_index(rng_a_, static_cast<std::uint32_t>(geom_.degree()))));
    remove_a(site);
    arrive_a(y);
    refresh_site(site);
    refresh_site(y);
    log(site, EventKind::WalkA);
  } else {
    remove_a(site);
    refresh_site(site);
    log(site, EventKind::CoalAA);
  }
}

void Simulator::apply_b_event() {
  std::size_t x = index_b_.find(uniform01(rng_b_) * index_b_.total());
  if (x >= index_b_.size() || index_b_.rate(x) <= 0.0) {
    index_b_.rebuild();
    x = index_b_.find(uniform01(rng_b_) * index_b_.total());
    if (x >= index_b_.size() || index_b_.rate(x) <= 0.0) throw ConsistencyError("B rate index selected an inactive site");
  }
  const auto site = static_cast<std::uint32_t>(x);
  const SiteRates r = site_rates(cfg_.a[site], cfg_.b[site], params_);
  if (uniform01(rng_b_) * r.total_b() < r.walk_b) {
    const auto y = geom_.step(site, static_cast<int>(uniform_index(rng_b_, static_cast<std::uint32_t>(geom_.degree()))));
    remove_b(site);
    arrive_b(y);
    index_b_.set(site, site_rates(cfg_.a[site], cfg_.b[site], params_).total_b());
    index_b_.set(y, site_rates(cfg_.a[y], cfg_.b[y], params_).total_b());
    log(site, EventKind::WalkB);
  } else {
    remove_b(site);
    index_b_.set(site, site_rates(cfg_.a[site], cfg_.b[site], params_).total_b());
    log(site, EventKind::CoalAB);
  }
}

bool Simulator::step() {
  const double ta = next_a_;
  const double tb = next_b_;
  if (ta == kInf && tb == kInf) return false;
  ++events_;
  if (ta <= tb) {
    consume_b_hazard(ta);
    apply_a_event();
    if (++events_a_ % kRebuildInterval == 0) index_a_.rebuild();
    draw_a_clock();
  } else {
    cfg_.time = tb;
    apply_b_event();
    if (++events_b_ % kRebuildInterval == 0) index_b_.rebuild();
    hazard_b_ = standard_exponential(rng_b_);
  }
  project_b();
  return true;
}

void Simulator::run_until(double t_end, std::span<const double> measure_times, const MeasureHook& hook) {
  if (!(t_end >= cfg_.time)) throw UsageError("run_until: t_end precedes the current time");
  std::size_t mi = 0;
  for (std::size_t i = 0; i < measure_times.size(); ++i) {
    if (measure_times[i] < cfg_.time) throw UsageError("run_until: measurement time precedes the current time");
    if (i > 0 && measure_times[i] < measure_times[i - 1]) throw UsageError("run_until: measurement times must be sorted");
  }
  for (;;) {
    const double t_next = next_event_time();
    while (mi < measure_times.size() && measure_times[mi] <= t_end && measure_times[mi] < t_next) {
      if (hook) hook(measure_times[mi], cfg_);
      ++mi;
    }
    if (t_next > t_end) break;
    step();
  }
  // advance the clock to t_end without an event; the pending clocks stay valid
  consume_b_hazard(t_end);
}

double Simulator::index_drift() const {
  auto rel = [](double maintained, double exact) {
    if (exact == 0.0) return std::abs(maintained);
    return std::abs(maintained - exact) / std::abs(exact);
  };
  return std::max(rel(index_a_.total(), index_a_.recomputed_total()),
                  rel(index_b_.total(), index_b_.recomputed_total()));
}

void Simulator::check_invariants() const {
  std::uint64_t ta = 0, tb = 0, oa = 0, ob = 0;
  for (std::uint32_t x = 0; x < geom_.volume(); ++x) {
    const auto na = cfg_.a[x];
    const auto nb = cfg_.b[x];
    if (params_.instant_a && na > 1) throw ConsistencyError("instant A invariant violated");
    if (params_.instant_b && na > 0 && nb > 0) throw ConsistencyError("instant B invariant violated");
    ta += na;
    tb += nb;
    oa += na > 0;
    ob += nb > 0;
    const SiteRates r = site_rates(na, nb, params_);
    if (index_a_.rate(x) != r.total_a() || index_b_.rate(x) != r.total_b())
      throw ConsistencyError("rate index leaf out of sync at site " + std::to_string(x));
  }
  if (ta != total_a_ || tb != total_b_ || oa != occupied_a_ || ob != occupied_b_)
    throw ConsistencyError("cached particle totals out of sync");
}

}  // namespace coal

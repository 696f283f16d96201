#include "coal/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <istream>
#include <limits>
#include <sstream>
#include <thread>

#include "coal/errors.hpp"

namespace coal {

std::vector<double> ExperimentSpec::measurement_times() const {
  std::vector<double> out = times;
  if (out.empty()) {
    double t = t0;
    for (int i = 0; i < n_points; ++i, t *= ratio) out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double ExperimentSpec::t_max() const {
  const auto ts = measurement_times();
  return ts.empty() ? 0.0 : ts.back();
}

double ExperimentSpec::finite_size_limit() const {
  const double dmax = std::max(params.diff_a, params.diff_b);
  if (dmax <= 0) return std::numeric_limits<double>::infinity();
  const double quarter = side / 4.0;
  return quarter * quarter / (2.0 * dim * dmax);
}

void ExperimentSpec::validate() const {
  if (dim < 1) throw UsageError("dim must be >= 1");
  if (side < 2) throw UsageError("side must be >= 2");
  params.validate();
  init.validate();
  if (replicas < 1) throw UsageError("replicas must be >= 1");
  if (threads < 1) throw UsageError("threads must be >= 1");
  if (times.empty()) {
    if (!(t0 > 0) || !(ratio > 1) || n_points < 1) throw UsageError("time grid needs t0 > 0, ratio > 1, n_points >= 1");
  } else {
    for (double t : times)
      if (!(t >= 0) || !std::isfinite(t)) throw UsageError("measurement times must be finite and >= 0");
  }
  (void)geometry();
}

KeyValues parse_key_values(std::istream& is) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

namespace {

double to_double(const std::string& k, const std::string& v) {
  if (v == "inf" || v == "infinity") return std::numeric_limits<double>::infinity();
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("config key " + k + ": not a number: " + v);
  }
}

std::uint64_t to_u64(const std::string& k, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("config key " + k + ": not a non-negative integer: " + v);
  }
}

bool to_bool(const std::string& k, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw UsageError("config key " + k + ": not a boolean: " + v);
}

// A rate given as inf sets the instant flag.
void set_rate(double& rate, bool& instant, const std::string& k, const std::string& v) {
  const double x = to_double(k, v);
  if (std::isinf(x) && x > 0) {
    instant = true;
    rate = 0.0;
  } else {
    instant = false;
    rate = x;
  }
}

}  // namespace

void apply_key_values(ExperimentSpec& s, const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "dim") s.dim = static_cast<int>(to_u64(k, v));
    else if (k == "side") s.side = static_cast<int>(to_u64(k, v));
    else if (k == "D_A") s.params.diff_a = to_double(k, v);
    else if (k == "D_B") s.params.diff_b = to_double(k, v);
    else if (k == "lambda_A") set_rate(s.params.coal_a, s.params.instant_a, k, v);
    else if (k == "lambda_B") set_rate(s.params.coal_b, s.params.instant_b, k, v);
    else if (k == "instant_A") s.params.instant_a = to_bool(k, v);
    else if (k == "instant_B") s.params.instant_b = to_bool(k, v);
    else if (k == "init") {
      if (v == "poisson") s.init.kind = InitKind::Poisson;
      else if (v == "deterministic") s.init.kind = InitKind::Deterministic;
      else if (v == "bernoulli") s.init.kind = InitKind::Bernoulli;
      else throw UsageError("init must be poisson, deterministic or bernoulli");
    } else if (k == "init_A") s.init.param_a = to_double(k, v);
    else if (k == "init_B") s.init.param_b = to_double(k, v);
    else if (k == "t0") s.t0 = to_double(k, v);
    else if (k == "ratio") s.ratio = to_double(k, v);
    else if (k == "n_points") s.n_points = static_cast<int>(to_u64(k, v));
    else if (k == "times") {
      s.times.clear();
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" "));
        item.erase(item.find_last_not_of(" ") + 1);
        if (!item.empty()) s.times.push_back(to_double(k, item));
      }
    } else if (k == "replicas") s.replicas = to_u64(k, v);
    else if (k == "seed") s.seed = to_u64(k, v);
    else if (k == "threads") s.threads = static_cast<unsigned>(to_u64(k, v));
    else if (k == "override_guard") s.override_guard = to_bool(k, v);
    else if (k == "out_dir") s.out_dir = v;
    else throw UsageError("unknown config key: " + k);
  }
}

std::string format_spec(const ExperimentSpec& s) {
  std::ostringstream os;
  auto num = [](double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  const char* kinds[] = {"poisson", "deterministic", "bernoulli"};
  os << "dim = " << s.dim << "\n"
     << "side = " << s.side << "\n"
     << "D_A = " << num(s.params.diff_a) << "\n"
     << "D_B = " << num(s.params.diff_b) << "\n"
     << "lambda_A = " << (s.params.instant_a ? "inf" : num(s.params.coal_a)) << "\n"
     << "lambda_B = " << (s.params.instant_b ? "inf" : num(s.params.coal_b)) << "\n"
     << "init = " << kinds[static_cast<int>(s.init.kind)] << "\n"
     << "init_A = " << num(s.init.param_a) << "\n"
     << "init_B = " << num(s.init.param_b) << "\n";
  if (s.times.empty()) {
    os << "t0 = " << num(s.t0) << "\n"
       << "ratio = " << num(s.ratio) << "\n"
       << "n_points = " << s.n_points << "\n";
  } else {
    os << "times = ";
    for (std::size_t i = 0; i < s.times.size(); ++i) os << (i ? "," : "") << num(s.times[i]);
    os << "\n";
  }
  os << "replicas = " << s.replicas << "\n"
     << "seed = " << s.seed << "\n"
     << "override_guard = " << (s.override_guard ? "true" : "false") << "\n";
  return os.str();
}

void parallel_for(std::uint64_t n, unsigned threads, const std::function<void(std::uint64_t)>& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::min<std::uint64_t>(n, 1024))));
  if (threads == 1) {
    for (std::uint64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::uint64_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::uint64_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace coal

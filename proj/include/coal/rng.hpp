#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace coal {

using Rng = std::mt19937_64;

/// Stream identifiers mixed into seed derivation. A replica owns one stream per role.
enum class Stream : std::uint64_t {
  InitA = 1,
  InitB = 2,
  EventsA = 3,
  EventsB = 4,
  Aux = 5,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based seed split: seed(base, replica, stream) is a pure function, so
/// extending a replica set never changes the streams of existing replicas.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t replica, Stream stream) {
  std::uint64_t h = splitmix64(base);
  h = splitmix64(h ^ splitmix64(replica + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(stream) * 0xd6e8feb86659fd93ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::uint64_t replica, Stream stream) {
  return Rng(derive_seed(base, replica, stream));
}

/// Uniform on (0, 1] with 53-bit resolution.
inline double uniform_open_closed(Rng& rng) {
  return static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53;
}

/// Uniform on [0, 1).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Exp(1) by inversion on (0,1]; never returns inf.
inline double standard_exponential(Rng& rng) { return -std::log(uniform_open_closed(rng)); }

/// Uniform integer in [0, n) by 128-bit multiply-shift; bias is at most n / 2^64.
inline std::uint32_t uniform_index(Rng& rng, std::uint32_t n) {
  return static_cast<std::uint32_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

}  // namespace coal

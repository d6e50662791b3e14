#pragma once

// Seeded random-number plumbing. Each purpose owns an independent stream so
// consuming one never perturbs another. Counter-based draws (a pure function of
// seed and coordinates) back the quantities that are evaluated lazily.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace nbiot {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ splitmix64(v));
}

template <typename... Ts>
constexpr std::uint64_t hash_values(std::uint64_t seed, Ts... vs) {
  std::uint64_t h = splitmix64(seed);
  ((h = hash_combine(h, static_cast<std::uint64_t>(vs))), ...);
  return h;
}

inline constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Uniform in (0, 1) from a 64-bit hash.
inline double unit_open(std::uint64_t h) {
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

/// Counter-based standard complex Gaussian CN(0, 1): E|z|^2 = 1.
struct ComplexSample {
  double re = 0.0;
  double im = 0.0;
};

inline ComplexSample complex_normal(std::uint64_t key) {
  const double u1 = unit_open(splitmix64(key ^ 0x51ed2701ULL));
  const double u2 = unit_open(splitmix64(key ^ 0xa3b195354a39b70dULL));
  const double r = std::sqrt(-std::log(u1));  // |z|^2 ~ Exp(1)
  const double phi = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(phi), r * std::sin(phi)};
}

/// Counter-based Exp(1) draw, i.e. |h|^2 of a unit-power Rayleigh tap.
inline double exponential_unit(std::uint64_t key) { return -std::log(unit_open(splitmix64(key))); }

using Engine = std::mt19937_64;

/// Named sub-streams derived from one seed.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  Engine stream(std::string_view name) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(hash_name(name)),
                      static_cast<std::uint32_t>(hash_name(name) >> 32)};
    return Engine(seq);
  }

  /// Key for counter-based draws belonging to `name`.
  std::uint64_t key(std::string_view name) const { return hash_values(seed_, hash_name(name)); }

 private:
  std::uint64_t seed_;
};

namespace stream {
inline constexpr std::string_view kPlacement = "placement";
inline constexpr std::string_view kShadowing = "shadowing";
inline constexpr std::string_view kFading = "fading";
inline constexpr std::string_view kTraffic = "traffic";
inline constexpr std::string_view kCoinToss = "coin-toss";
inline constexpr std::string_view kScheduler = "scheduler";
inline constexpr std::string_view kInterferers = "interferers";
}  // namespace stream

/// Standard normal by Box-Muller, one value per call. std::normal_distribution
/// caches its second value inside the distribution object, so a fresh object
/// per call would waste draws and a shared one would couple callers.
inline double standard_normal(Engine& eng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double u1 = u(eng);
  while (u1 <= 0.0) u1 = u(eng);
  const double u2 = u(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double uniform01(Engine& eng) { return std::uniform_real_distribution<double>(0.0, 1.0)(eng); }

}  // namespace nbiot

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <string_view>

namespace glioma {

/// splitmix64 finalizer; used to derive independent seeds for named sub-streams.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Random stream with portable uniform/normal draws. Streams are addressed by
/// (seed, name, indices) so that results never depend on scheduling order.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  Rng(std::uint64_t seed, std::string_view name,
      std::initializer_list<std::uint64_t> indices = {})
      : engine_(derive(seed, name, indices)) {}

  static std::uint64_t derive(std::uint64_t seed, std::string_view name,
                              std::initializer_list<std::uint64_t> indices) {
    std::uint64_t h = mix64(seed ^ mix64(hash_name(name)));
    for (auto i : indices) h = mix64(h ^ mix64(i + 0x632be59bd9b4e019ULL));
    return h;
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller (no cached second value; keeps draws stateless).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::mt19937_64& engine() { return engine_; }

private:
  std::mt19937_64 engine_;
};

}  // namespace glioma

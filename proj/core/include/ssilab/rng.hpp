#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ssilab {

/// Name of the pseudo-random construction. Part of the synthetic-data contract:
/// bumping any detail of Rng changes generated dumps, so bump this too.
inline constexpr const char* kRngName = "mt19937_64+splitmix64/v1";

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30U)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27U)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31U);
}

/// Derives an independent stream seed from a root seed and a list of tags.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = mix64(root);
  for (auto t : tags) {
    h = mix64(h ^ mix64(t + 0x632BE59BD9B4E019ULL));
  }
  return h;
}

/// Portable generator: the engine is std::mt19937_64 (fully specified by the
/// standard); the distributions are implemented here because the standard
/// library's are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11U) * 0x1.0p-53; }

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r >= threshold) {
        return r % bound;
      }
    }
  }

  /// Standard normal via Box-Muller; values are produced in pairs.
  double normal();

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace ssilab

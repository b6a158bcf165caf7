#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace exssnet {

// Named random streams. Every consumer of randomness draws from its own
// stream, derived from (base seed, stream id, index), so that enabling or
// disabling one feature never shifts the draws seen by another. This is what
// makes "same seed => same numbers" hold across configuration toggles that
// are supposed to leave a phase untouched.
enum class RngStream : std::uint64_t {
  kWeightInit = 1,
  kTaskSplit = 2,
  kScoreInit = 3,
  kMaskEpochShuffle = 4,
  kWeightEpochShuffle = 5,
  kTransferProbe = 6,
  kScorePinning = 7,
  kSynthData = 8,
};

// splitmix64: the standard 64-bit finalizer-style generator used to spread
// (seed, stream, index) triples into well-mixed 64-bit values.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, RngStream stream,
                                 std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(base);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  return splitmix64(h ^ index);
}

// Thin wrapper over mt19937_64 with hand-rolled float/shuffle helpers.
// std::uniform_real_distribution and std::shuffle are not pinned down by the
// standard, so we avoid them anywhere reproducibility matters.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, bound) by rejection sampling (no modulo bias).
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % bound;
  }

  // Uniform float in the open interval (0, 1): 24 leading bits plus a half
  // step, so 0.0 and 1.0 are never produced.
  float next_float_open01() {
    const auto bits = static_cast<std::uint32_t>(engine_() >> 40);
    return (static_cast<float>(bits) + 0.5f) * 0x1p-24f;
  }

  // Uniform double in [0, 1) with 53 bits.
  double next_double01() {
    return static_cast<double>(engine_() >> 11) * 0x1p-53;
  }

  // Standard normal via Box-Muller (one value per pair; the partner draw is
  // discarded to keep the consumption pattern simple and stable).
  float next_gaussian() {
    const double u1 = (static_cast<double>(engine_() >> 11) + 0.5) * 0x1p-53;
    const double u2 = (static_cast<double>(engine_() >> 11) + 0.5) * 0x1p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return static_cast<float>(r * std::cos(2.0 * std::numbers::pi * u2));
  }

  // Fisher-Yates, back to front, using next_below for each pick.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace exssnet

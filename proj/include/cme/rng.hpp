#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace cme {

/// Counter-based random stream (Philox4x32-10). The (seed, stream_id) pair
/// fully determines the sequence, so worker b can construct
/// rng_stream(seed, b) on any thread and always see the same draws.
///
/// Stream ids below 2^62 are reserved for replicate / chunk / fold indices;
/// auxiliary consumers (fold shuffles, reference grids, learner splits) take
/// ids from the `streams` namespace so they never collide with replicate
/// streams of the same seed.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        counter_{0, 0, static_cast<std::uint32_t>(stream_id),
                 static_cast<std::uint32_t>(stream_id >> 32)} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~static_cast<result_type>(0); }

  result_type operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const auto block = next_block();
    spare_ = (static_cast<std::uint64_t>(block[3]) << 32) | block[2];
    have_spare_ = true;
    return (static_cast<std::uint64_t>(block[1]) << 32) | block[0];
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (two uniforms per draw, sine half unused).
  double normal() {
    const double u1 = (static_cast<double>((*this)() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Uniform integer in [0, n). Multiply-shift map; the residual bias of
  /// n / 2^64 is far below anything observable here.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }

 private:
  static std::array<std::uint32_t, 4> round(const std::array<std::uint32_t, 4>& ctr,
                                            const std::array<std::uint32_t, 2>& key) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(0xD2511F53u) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(0xCD9E8D57u) * ctr[2];
    return {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
            static_cast<std::uint32_t>(p1),
            static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
            static_cast<std::uint32_t>(p0)};
  }

  std::array<std::uint32_t, 4> next_block() {
    std::array<std::uint32_t, 4> ctr = counter_;
    std::array<std::uint32_t, 2> key = key_;
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
      }
      ctr = round(ctr, key);
    }
    if (++counter_[0] == 0) ++counter_[1];  // 64-bit draw counter in words 0:1
    return ctr;
  }

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::uint64_t spare_ = 0;
  bool have_spare_ = false;
};

inline RngStream rng_stream(std::uint64_t seed, std::uint64_t stream_id) {
  return RngStream(seed, stream_id);
}

/// Reserved auxiliary stream ids (top quarter of the id space).
namespace streams {
inline constexpr std::uint64_t aux_base = std::uint64_t{3} << 62;
inline constexpr std::uint64_t cv_folds = aux_base + 1;        // lambda / bandwidth CV shuffles
inline constexpr std::uint64_t grid_reference = aux_base + 2;  // Monte Carlo reference grid
inline constexpr std::uint64_t nuisance_folds = aux_base + 3;  // cross-fitting assignment
inline constexpr std::uint64_t nuisance_fit = aux_base + 256;  // + fold index, per-fold learners
}  // namespace streams

}  // namespace cme

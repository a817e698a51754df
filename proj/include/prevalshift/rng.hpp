#pragma once

// Counter-based random numbers.
//
// Generator: Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy
// as 1, 2, 3", SC'11). Streams are addressed by a 64-bit key and a 64-bit
// block counter; child streams are derived by hashing (key, stream id) with
// SplitMix64. All derived distributions below are implemented here rather
// than taken from <random>, whose distributions are not specified
// bit-for-bit across standard libraries.
//
// Version tag "philox4x32-10/v1": any change to key derivation or to the
// distribution transforms must bump it, because it changes every sweep.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "prevalshift/error.hpp"

namespace prevalshift {

inline constexpr std::string_view kRngVersion = "philox4x32-10/v1";

/// Seed of a deterministic run: identical seed + identical config reproduce
/// every output bit.
struct RngSeed {
  std::uint64_t value = 0;

  friend bool operator==(const RngSeed&, const RngSeed&) = default;
};

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint32_t mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  return static_cast<std::uint32_t>(product);
}

}  // namespace detail

/// Raw Philox4x32 block function with 10 rounds.
inline constexpr std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                            std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53U;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57U;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9U;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85U;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    std::uint32_t hi0 = 0;
    std::uint32_t hi1 = 0;
    const std::uint32_t lo0 = detail::mulhilo32(kMul0, ctr[0], hi0);
    const std::uint32_t lo1 = detail::mulhilo32(kMul1, ctr[2], hi1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

class Rng {
 public:
  explicit Rng(RngSeed seed) : key_(detail::splitmix64(seed.value)) {}

  /// Independent child stream. Children of the same parent with distinct ids
  /// never share a key in practice (64-bit hash of parent key and id).
  Rng split(std::uint64_t stream_id) const {
    Rng child(RngSeed{0});
    child.key_ = detail::splitmix64(key_ ^ detail::splitmix64(stream_id + 0x632BE59BD9B4E019ULL));
    return child;
  }

  /// Convenience: derive a child seed rather than a generator.
  RngSeed derive_seed(std::uint64_t stream_id) const { return RngSeed{split(stream_id).key_}; }

  std::uint32_t next_u32() {
    if (lane_ == 4) refill();
    return block_[lane_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    const std::uint64_t lo = next_u32();
    return (hi << 32) | lo;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n) by rejection; n must be positive.
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, ErrorCode::InvalidArgument, "Rng::below requires n > 0");
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t draw = 0;
    do {
      draw = next_u64();
    } while (draw >= limit);
    return draw % n;
  }

  /// Standard normal via Box-Muller (one value per call; the pair partner is discarded).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  void refill() {
    const std::array<std::uint32_t, 4> ctr = {static_cast<std::uint32_t>(counter_),
                                              static_cast<std::uint32_t>(counter_ >> 32), 0U, 0U};
    block_ = philox4x32_10(ctr, {static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)});
    ++counter_;
    lane_ = 0;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  std::size_t lane_ = 4;
};

/// Draws `count` indices with replacement, P(i) proportional to weights[i].
/// Cumulative table with binary search; weights must be finite and non-negative
/// with a positive sum.
inline std::vector<std::size_t> sample_with_replacement(std::span<const double> weights, std::size_t count,
                                                        Rng& rng) {
  std::vector<double> cumulative(weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    require(std::isfinite(weights[i]) && weights[i] >= 0.0, ErrorCode::InvalidArgument,
            "sampling weights must be finite and non-negative");
    total += weights[i];
    cumulative[i] = total;
  }
  require(total > 0.0, ErrorCode::ZeroTotalWeight, "sampling weights sum to zero");
  std::vector<std::size_t> picks;
  picks.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    picks.push_back(static_cast<std::size_t>(it - cumulative.begin()));
  }
  return picks;
}

}  // namespace prevalshift

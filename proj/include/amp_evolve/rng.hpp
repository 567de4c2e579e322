#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace amp_evolve {

// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
// A keyed bijection on 128-bit counters; every draw in the library is a pure
// function of (seed, stream, counter).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static constexpr Counter apply(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Well-separated stream ids for the different consumers of randomness.
namespace streams {
inline constexpr std::uint64_t kMatrix = 1;
inline constexpr std::uint64_t kSignal = 2;
inline constexpr std::uint64_t kNoise = 3;
inline constexpr std::uint64_t kInitial = 4;
inline constexpr std::uint64_t kSample = 5;
inline constexpr std::uint64_t kMonteCarlo = 6;
inline constexpr std::uint64_t kVerification = 7;
inline constexpr std::uint64_t kPositionHash = 8;
}  // namespace streams

/// Maps a 64-bit word to a double uniformly in the open interval (0, 1).
constexpr double to_unit_open(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// Counter-based generator keyed by (seed, stream).
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept {
    const std::uint64_t k = splitmix64(seed ^ splitmix64(stream * 0x632BE59BD9B4E019ull + 1));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  constexpr std::array<std::uint64_t, 2> bits(std::uint64_t c0, std::uint64_t c1) const noexcept {
    const Philox4x32::Counter ctr = {static_cast<std::uint32_t>(c0), static_cast<std::uint32_t>(c0 >> 32),
                                     static_cast<std::uint32_t>(c1), static_cast<std::uint32_t>(c1 >> 32)};
    const auto out = Philox4x32::apply(ctr, key_);
    return {(static_cast<std::uint64_t>(out[1]) << 32) | out[0],
            (static_cast<std::uint64_t>(out[3]) << 32) | out[2]};
  }

  /// Two independent uniforms on (0, 1) for counter (c0, c1).
  constexpr std::array<double, 2> uniforms(std::uint64_t c0, std::uint64_t c1) const noexcept {
    const auto b = bits(c0, c1);
    return {to_unit_open(b[0]), to_unit_open(b[1])};
  }

 private:
  Philox4x32::Key key_{};
};

/// Inverse standard-normal CDF (Acklam's rational approximation, |rel err| < 1.2e-9).
inline double normal_quantile(double p) noexcept {
  constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                          1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                          6.680131188771972e+01,  -1.328068155288572e+01};
  constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                          -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                          3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

/// Sequential view over a CounterRng: draw k uses counter (k, 0).
/// Satisfies std::uniform_random_bit_generator.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream) noexcept : rng_(seed, stream) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (slot_ == 2) {
      buf_ = rng_.bits(counter_++, 0);
      slot_ = 0;
    }
    return buf_[slot_++];
  }

  double uniform() noexcept { return to_unit_open((*this)()); }
  double normal() noexcept { return normal_quantile(uniform()); }

 private:
  CounterRng rng_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buf_{};
  int slot_ = 2;
};

}  // namespace amp_evolve

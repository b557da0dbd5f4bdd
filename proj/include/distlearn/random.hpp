#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace distlearn {

/// 64-bit finalizer from SplitMix64. Used to derive child seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a, for turning stream labels ("train", "eval", ...) into keys.
constexpr std::uint64_t hash_key(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seeded, splittable random stream.
///
/// A stream is identified by its seed; `split(key)` derives an independent
/// child stream from that identity alone, so children do not depend on how
/// many numbers the parent has already produced. This is what lets the
/// trainer split "phase -> iteration -> distribution -> purpose" without one
/// phase perturbing another.
///
/// Uniform and exponential variates are produced with explicit bit
/// manipulations rather than the <random> distribution adaptors, whose
/// algorithms are implementation-defined.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  [[nodiscard]] RandomStream split(std::uint64_t key) const {
    return RandomStream(mix64(seed_ ^ mix64(key ^ 0x5851f42d4c957f2dULL)));
  }
  [[nodiscard]] RandomStream split(std::string_view key) const { return split(hash_key(key)); }

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

  result_type operator()() { return engine_(); }
  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Unit-rate exponential, strictly positive.
  double exponential() {
    double e = -std::log1p(-uniform());
    // uniform() == 0 gives exactly 0; the law has support (0, inf).
    while (e == 0.0) e = -std::log1p(-uniform());
    return e;
  }

  /// Integer in [0, n) by multiply-shift; bias is below 2^-64 * n.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(engine_()) * n) >> 64);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace distlearn

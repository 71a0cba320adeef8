#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace islandsmc {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

/// Seeded xoshiro256** generator labelled by (seed, stream_id).
///
/// Substreams are obtained with derive(), which hashes the parent label with the
/// given keys. The generator state is a pure function of (seed, stream_id), so a
/// stream can be reconstructed anywhere (e.g. on another worker thread) and will
/// produce the same draws. Satisfies UniformRandomBitGenerator.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed, std::uint64_t stream_id = 0) noexcept
      : seed_(seed), stream_id_(stream_id) {
    std::uint64_t x = seed ^ detail::splitmix64(stream_id ^ 0x6a09e667f3bcc909ULL);
    for (auto& s : state_) {
      x = detail::splitmix64(x);
      s = x;
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Fresh substream keyed by this stream's label and `key`. Does not consume draws.
  RandomStream derive(std::uint64_t key) const noexcept {
    return RandomStream(seed_, detail::splitmix64(stream_id_ ^ detail::splitmix64(key + 0x3c6ef372fe94f82bULL)));
  }

  template <class... Keys>
  RandomStream derive(std::uint64_t key, Keys... rest) const noexcept {
    return derive(key).derive(static_cast<std::uint64_t>(rest)...);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return next(); }

  result_type next() noexcept {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the second variate is discarded so each
  /// call consumes exactly two words.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

  bool bernoulli(double p) noexcept { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t state_[4];
};

}  // namespace islandsmc

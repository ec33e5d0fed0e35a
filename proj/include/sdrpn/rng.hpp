// Counter-based random streams.
//
// A stream is a pure function of (seed, stream id, counter): the i-th draw never
// depends on how many other streams were consumed first, so per-sample streams
// can be generated in any order or in parallel with identical results.

#pragma once

#include <cstdint>
#include <vector>

namespace sdrpn {

/// Stateless 64-bit mixer (SplitMix64 finalizer).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_(stream_id), key_(mix64(mix64(seed) ^ mix64(stream_id ^ 0x6a09e667f3bcc909ULL))) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Independent child stream keyed by `tag`; does not advance this stream.
  RngStream derive(std::uint64_t tag) const { return RngStream(seed_, mix64(stream_ ^ mix64(tag + 0x3c6ef372fe94f82bULL))); }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t c = counter_++;
    return mix64(key_ ^ mix64(c * 0xd1b54a32d192ed03ULL));
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Standard normal via Box-Muller (one normal per two uniforms).
  double normal() noexcept;

  /// Standard Gumbel draw.
  double gumbel() noexcept;

  bool bernoulli(double p) noexcept { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// n uniform draws in [0,1); advances `s` by n.
std::vector<double> rng_uniform(RngStream& s, std::size_t n);

}  // namespace sdrpn

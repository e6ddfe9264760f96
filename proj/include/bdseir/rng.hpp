#pragma once

// Counter-based random streams (Philox4x32-10).
//
// Every draw in the sampler comes from a stream addressed by
// (key, iteration, purpose, time, index). Two streams with different
// addresses never overlap, and the values a stream produces do not depend
// on which thread consumes it or in what order streams are created.

#include <array>
#include <cstdint>
#include <limits>

namespace bdseir {

class Philox4x32 {
public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter encrypt(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// splitmix64 finalizer; used to turn user seeds into Philox keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// What a stream is used for. Part of the stream address.
enum class StreamPurpose : std::uint8_t {
  Initial = 1,
  Resample = 2,
  Propagate = 3,
  AncestorSample = 4,
  Reference = 5,
  Metropolis = 6,
  ParameterInit = 7,
  Simulation = 8,
  Generic = 9,
};

/// One independent random stream. Satisfies UniformRandomBitGenerator.
class RandomStream {
public:
  using result_type = std::uint64_t;

  RandomStream(std::uint64_t key, std::uint32_t iteration, StreamPurpose purpose,
               std::uint32_t time, std::uint32_t index) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        ctr_{0u, (static_cast<std::uint32_t>(purpose) << 24) | (time & 0x00FFFFFFu), index,
             iteration} {}

  /// Convenience stream keyed by a seed alone.
  explicit RandomStream(std::uint64_t seed) noexcept
      : RandomStream(mix64(seed), 0, StreamPurpose::Generic, 0, 0) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  std::uint32_t next_u32() noexcept {
    if (pos_ == 4) refill();
    return block_[pos_++];
  }

  result_type operator()() noexcept {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform double on the open interval (0, 1), 53-bit resolution.
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

private:
  void refill() noexcept {
    block_ = Philox4x32::encrypt(ctr_, key_);
    ++ctr_[0];
    pos_ = 0;
  }

  Philox4x32::Key key_;
  Philox4x32::Counter ctr_;
  Philox4x32::Counter block_{};
  int pos_ = 4;
};

/// Hands out streams for one sampler iteration.
struct StreamFactory {
  std::uint64_t key = 0;
  std::uint32_t iteration = 0;

  static StreamFactory from_seed(std::uint64_t seed, std::uint32_t iteration = 0) noexcept {
    return {mix64(seed), iteration};
  }

  RandomStream stream(StreamPurpose purpose, std::uint32_t time = 0,
                      std::uint32_t index = 0) const noexcept {
    return RandomStream(key, iteration, purpose, time, index);
  }

  StreamFactory at_iteration(std::uint32_t it) const noexcept { return {key, it}; }
};

}  // namespace bdseir

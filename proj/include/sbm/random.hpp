#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <random>

namespace sbm {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ (Blackman & Vigna); satisfies UniformRandomBitGenerator.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<std::uint64_t, 4> s_{};
};

/// Seed of the stream (master, experiment, replica).
///
/// The master seed is pushed through splitmix64 once per coordinate:
///   s0 = master, s1 = mix(s0 + experiment * golden), s2 = mix(s1 ^ replica)
/// and the xoshiro state is then filled from splitmix64(s2). Any
/// implementation following this rule reproduces the stream seeds.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t experiment, std::uint64_t replica) {
  std::uint64_t s = master + experiment * 0x9E3779B97F4A7C15ULL;
  s = splitmix64(s);
  std::uint64_t t = s ^ (replica * 0xD1B54A32D192ED03ULL);
  return splitmix64(t);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  static Rng stream(std::uint64_t master, std::uint64_t experiment, std::uint64_t replica) {
    return Rng(stream_seed(master, experiment, replica));
  }

  double normal() { return normal_(engine_); }
  /// Uniform on (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }
  Xoshiro256pp& engine() { return engine_; }

 private:
  Xoshiro256pp engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace sbm

#pragma once

#include <cmath>
#include <cstdint>

namespace hypopath {

// Counter-based generator: every (seed, stream) pair owns an independent,
// platform-stable sequence. Used everywhere randomness must be reproducible
// bit-for-bit regardless of thread count or evaluation order.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in (0, 1); never returns 0 so log() below is safe.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. We deliberately avoid
  // std::normal_distribution: its output is implementation-defined.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_uniform();
    double u2 = next_uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Derives a child seed for (seed, stream index) pairs. Mixing the index
// through one SplitMix64 round keeps adjacent streams decorrelated.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 mix(seed ^ (0x2545f4914f6cdd1dULL * (stream + 1)));
  return mix.next_u64();
}

inline SplitMix64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  return SplitMix64(derive_seed(seed, stream));
}

}  // namespace hypopath

#pragma once

#include <cmath>
#include <cstdint>

namespace flame {

namespace detail {

/// SplitMix64 output function (stateless mix of a 64-bit word).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based pseudo-random stream (SplitMix64). Substreams are derived by
/// hashing (seed, id0, id1, id2), so draws are reproducible no matter how work
/// is scheduled across threads: every chain / replicate / subject owns its own
/// stream keyed by indices, never by execution order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t id0 = 0, std::uint64_t id1 = 0,
               std::uint64_t id2 = 0) {
    state_ = detail::mix64(seed + 0x9E3779B97F4A7C15ULL);
    state_ = detail::mix64(state_ ^ detail::mix64(id0 + 0xD1B54A32D192ED03ULL));
    state_ = detail::mix64(state_ ^ detail::mix64(id1 + 0x8CB92BA72F3D8DD7ULL));
    state_ = detail::mix64(state_ ^ detail::mix64(id2 + 0xABCC5167CCAD925FULL));
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return detail::mix64(state_);
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform over the integers {lo, ..., hi} inclusive.
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  /// Standard normal via Box-Muller; the paired draw is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace flame

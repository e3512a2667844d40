#pragma once

#include <cmath>
#include <cstdint>

namespace pmn {

/// Deterministic 64-bit generator (splitmix64). Hand-rolled so that the
/// same seed produces the same stream on every platform and standard
/// library; checkpoints and datasets record seeds, not streams.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  /// Standard normal via Box-Muller (no cached spare, for reproducibility
  /// independent of call interleaving).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Derive an independent stream for a tagged sub-task.
  Rng split(uint64_t tag) const {
    Rng r(state_ ^ (0x9e3779b97f4a7c15ull * (tag + 0x632be59bd9b4e019ull)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

/// FNV-1a, used for config hashes in run manifests.
inline uint64_t fnv1a64(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace pmn

#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace encore {

// Deterministic, platform-independent RNG. All sampling in the project goes
// through this type so that a (seed, step, stream) triple fully determines
// every random choice, independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed + 0x9e3779b97f4a7c15ULL) {
    // warm up so that small seeds do not produce correlated first draws
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53 random bits
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  float next_float() { return float(next_u64() >> 40) * 0x1.0p-24f; }

  // uniform integer in [lo, hi)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi <= lo) return lo;
    const std::uint64_t range = std::uint64_t(hi - lo);
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % range);
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return lo + std::int64_t(r % range);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Marsaglia polar method
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * next_double() - 1.0;
      v = 2.0 * next_double() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return mean + stddev * u * m;
  }

  template <class V>
  void shuffle(V& v) {
    for (std::int64_t i = std::int64_t(v.size()) - 1; i > 0; --i) {
      const std::int64_t j = uniform_int(0, i + 1);
      std::swap(v[std::size_t(i)], v[std::size_t(j)]);
    }
  }

  // random permutation of {0..n-1}
  std::vector<std::int64_t> permutation(std::int64_t n) {
    std::vector<std::int64_t> p(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) p[std::size_t(i)] = i;
    shuffle(p);
    return p;
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable seed derivation for independent streams: hash-combines the base
// seed with up to three stream coordinates (e.g. step, item, role).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  auto mix = [](std::uint64_t h, std::uint64_t x) {
    h ^= x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    std::uint64_t z = h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = base;
  h = mix(h, a);
  h = mix(h, b);
  h = mix(h, c);
  return h;
}

// Stream ids used when deriving per-purpose seeds inside training.
enum class RngStream : std::uint64_t {
  corpus_epoch = 1,
  crop = 2,
  shuffle_plan = 3,
  patch_positions = 4,
  weight_init = 5,
  audit = 6,
};

inline std::uint64_t derive_seed(std::uint64_t base, RngStream s,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  return derive_seed(base, static_cast<std::uint64_t>(s), b, c);
}

}  // namespace encore

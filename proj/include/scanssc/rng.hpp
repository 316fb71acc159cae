#pragma once

#include <cstdint>
#include <random>

namespace scanssc {

// mt19937_64 with explicit output mappings. The standard distributions are
// implementation-defined, so files produced from a seed would differ across
// toolchains; these mappings keep seeded outputs byte-identical everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Uniform integer in [0, n), n >= 1.
  int64_t below(int64_t n) { return static_cast<int64_t>(unit() * static_cast<double>(n)); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t range(int64_t lo, int64_t hi) { return lo + below(hi - lo + 1); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace scanssc

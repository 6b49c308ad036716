#pragma once

#include <cstdint>
#include <string_view>

namespace blindsr {

// Deterministic splittable RNG. All randomness in the project flows from one
// root seed split per subsystem ("kernel", "noise", "init", "timestep", ...),
// so components can be varied independently and runs can be resumed
// bit-exactly: a child stream depends only on (root seed, tag, index), never
// on how many draws the parent has made.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive range
  double normal();                       // N(0, 1), Box-Muller

  Rng split(std::string_view tag, uint64_t index = 0) const;
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace blindsr

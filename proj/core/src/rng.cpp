#include "blindsr/rng.hpp"

#include <cmath>

#include "blindsr/common.hpp"

namespace blindsr {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(uint64_t seed) : seed_(seed) {
  // a few warm-up mixes so nearby seeds decorrelate
  uint64_t x = seed;
  splitmix64(x);
  splitmix64(x);
  state_ = x;
}

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  // 53 high-quality bits -> [0,1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  BSR_CHECK(hi >= lo, "uniform_int: empty range");
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  // multiply-shift; bias is < 2^-64 per draw, irrelevant at desk scale
  unsigned __int128 m =
      static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(span);
  return lo + static_cast<int64_t>(static_cast<uint64_t>(m >> 64));
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  cached_normal_ = r * std::sin(kTwoPi * u2);
  has_cached_normal_ = true;
  return r * std::cos(kTwoPi * u2);
}

Rng Rng::split(std::string_view tag, uint64_t index) const {
  uint64_t x = seed_ ^ (fnv1a64(tag) + 0x9e3779b97f4a7c15ULL * (index + 1));
  uint64_t child = splitmix64(x);
  return Rng(child);
}

}  // namespace blindsr

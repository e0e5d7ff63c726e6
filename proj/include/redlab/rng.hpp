#pragma once

#include <cstdint>
#include <string_view>

namespace redlab {

// splitmix64; every stream of randomness in the lab derives from one config
// seed via derive_seed(seed, stream_name).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1); 53-bit resolution, identical across platforms
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Named-stream seed expansion: disjoint streams for model-init / data / shuffle.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
  Rng mix(base ^ fnv1a64(stream));
  return mix.next_u64();
}

}  // namespace redlab

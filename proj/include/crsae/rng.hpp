#pragma once

#include <cstdint>
#include <random>

namespace crsae {

// splitmix64 step; used to derive stream seeds from (seed, index) pairs so
// that per-window generators are independent of scheduling order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Mix a base seed with up to two stream tags (window index, purpose tag).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t s = splitmix64(base);
  s = splitmix64(s ^ splitmix64(a + 0x632be59bd9b4e019ULL));
  if (b != 0) s = splitmix64(s ^ splitmix64(b + 0x9e6c63d0876a9a47ULL));
  return s;
}

inline std::mt19937_64 make_rng(std::uint64_t base, std::uint64_t a = 0, std::uint64_t b = 0) {
  return std::mt19937_64(mix_seed(base, a, b));
}

}  // namespace crsae

#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace refxplain {

// splitmix64, used to derive independent sub-seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t seed_combine(std::uint64_t seed, std::uint64_t v) {
  return splitmix64(seed ^ splitmix64(v));
}

inline std::uint64_t seed_combine(std::uint64_t seed, const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return seed_combine(seed, h);
}

using Rng = std::mt19937_64;

}  // namespace refxplain

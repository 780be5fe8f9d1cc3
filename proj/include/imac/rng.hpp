#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace imac {

// Derives an independent 64-bit seed for a named stream ("init", "shuffle",
// "train", ...) from the run seed: FNV-1a over the name, mixed with splitmix64.
inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view stream) {
  return std::mt19937_64(stream_seed(seed, stream));
}

}  // namespace imac

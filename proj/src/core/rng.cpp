#include "fsd/core/rng.hpp"

namespace fsd {

std::uint64_t Rng::splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t Rng::derive(std::uint64_t seed, std::string_view name,
                          std::uint64_t index) {
  // FNV-1a over the stream name, mixed with seed and index.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix(splitmix(seed ^ h) + splitmix(index + 0x632be59bd9b4e019ULL));
}

}  // namespace fsd

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cpmle {

using Engine = std::mt19937_64;

inline constexpr std::uint64_t default_seed = 20090801ULL;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Key of the stream addressed by `path` under `root`. Streams for distinct paths are
/// independent of the order in which they are requested.
inline constexpr std::uint64_t stream_key(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t key = splitmix64(root);
  for (auto p : path) key = splitmix64(key ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return key;
}

inline Engine make_stream(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  const std::uint64_t key = stream_key(root, path);
  std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
  return Engine(seq);
}

}  // namespace cpmle

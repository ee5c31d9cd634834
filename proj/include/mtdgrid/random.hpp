#pragma once

// Seeded random streams. Every stochastic operation takes an explicit Rng so
// results are a pure function of the seeds handed down from the caller.
//
// Child seeds are derived with splitmix64 over (parent, tag), which keeps
// sibling streams decorrelated even for adjacent tags.

#include <cstdint>
#include <random>
#include <string_view>

namespace mtdgrid {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the stream identified by `tag` under `parent`.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
  return splitmix64(splitmix64(parent) ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

/// Same as above with a textual tag (FNV-1a hashed).
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return derive_seed(parent, h);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Draws a fresh seed from an existing stream.
inline std::uint64_t next_seed(Rng& rng) { return rng(); }

}  // namespace mtdgrid

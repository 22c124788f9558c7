// Copyright (c) 2026, The hierfed authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hierfed {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent seed for a named randomness stream, optionally keyed by
// (a, b), e.g. (device, round). Streams never share state, so the draw
// sequence of one device is independent of how work is scheduled.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t s = splitmix64(base ^ h);
  s = splitmix64(s ^ (a + 0x632be59bd9b4e019ULL));
  s = splitmix64(s ^ (b + 0x8cb92ba72f3d8dd7ULL));
  return s;
}

inline Rng make_rng(std::uint64_t base, std::string_view stream,
                    std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed(base, stream, a, b));
}

}  // namespace hierfed

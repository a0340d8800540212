// SPDX-License-Identifier: Apache-2.0
#include "dmacos/rng.hpp"

namespace dmacos {

namespace {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::mt19937_64 make_stream(std::uint64_t seed, std::string_view stream_name) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(fnv1a(stream_name))));
}

}  // namespace dmacos

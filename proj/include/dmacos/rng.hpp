// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace dmacos {

/// Independent generator for a named purpose ("init", "shuffle", "batches", ...)
/// derived from a run seed, so that changing how one stream is consumed never
/// perturbs another.
std::mt19937_64 make_stream(std::uint64_t seed, std::string_view stream_name);

/// Uniform double in [0, 1) built from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Fisher-Yates shuffle with a platform-independent index draw.
template <typename T>
void shuffle(std::span<T> items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace dmacos

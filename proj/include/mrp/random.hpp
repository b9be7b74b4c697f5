#pragma once

#include <cstdint>
#include <random>

namespace mrp {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Seed of stream `index` under `parent`. Streams are keyed by index only,
// so the value does not depend on how many siblings are generated or in
// which order.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
    return mix64(mix64(parent) ^ mix64(index + 0x632BE59BD9B4E019ULL));
}

inline Rng make_rng(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    return Rng(seq);
}

}  // namespace mrp

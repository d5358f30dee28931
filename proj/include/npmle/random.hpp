#pragma once

#include <cstdint>
#include <random>

namespace npmle {

/// SplitMix64 finalizer; decorrelates nearby integer keys.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Independent stream for (seed, purpose, index). Results do not depend on
/// thread count or on the order in which streams are drawn.
inline std::mt19937_64 keyed_engine(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
    const std::uint64_t key = splitmix64(splitmix64(splitmix64(seed) ^ purpose) ^ index);
    std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
    return std::mt19937_64(seq);
}

} // namespace npmle

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fatsim {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Order-sensitive mix of several words into one seed, e.g. (master, client, round).
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

// Uniform float in [0, 1) built from the top 24 bits; identical on every libstdc++.
inline float uniform01(Rng& rng) {
    return static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f);
}

}  // namespace fatsim

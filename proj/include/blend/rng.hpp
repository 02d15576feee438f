#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace blend {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Independent child seed for a named purpose; stable across platforms.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (char c : purpose) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ull;
    return mix64(seed ^ mix64(h));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view purpose) {
    return std::mt19937_64(derive_seed(seed, purpose));
}

}  // namespace blend

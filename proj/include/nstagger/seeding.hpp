#pragma once

#include <cstdint>
#include <string_view>

namespace nstagger {

/// Independent seed for a named sub-stream ("data", "init", "batch", ...) of a
/// top-level seed: splitmix64 of the seed mixed with an FNV-1a hash of the name.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::uint64_t z = seed ^ h;
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace nstagger

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rtgp {

using Rng = std::mt19937_64;

namespace detail {

// FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

/// Independent generator for a named substream ("truth", "inputs", "noise", "chain", ...)
/// of a single user seed. Same (seed, name, index) always yields the same stream.
inline Rng make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
    const std::uint64_t h = detail::fnv1a(name);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

}  // namespace rtgp

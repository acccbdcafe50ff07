#pragma once

#include <cstdint>
#include <random>

namespace cafeme {

using Rng = std::mt19937_64;

// splitmix64 finalizer; stable across platforms and releases.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed for stream `index` under `parent`. Children never depend on siblings.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
    return mix64(mix64(parent) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace cafeme

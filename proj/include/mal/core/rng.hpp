#pragma once

#include <cstdint>
#include <random>

namespace mal {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a) { return mix_seed(mix_seed(base) ^ a); }

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(base, a), b);
}

// Seed of the i-th episode drawn from a run seed (shared by eval, sessions and training).
constexpr std::uint64_t episode_seed(std::uint64_t run_seed, std::uint64_t index) {
    return derive_seed(run_seed, 0x45504953ULL, index);
}

}  // namespace mal

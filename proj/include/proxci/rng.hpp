#pragma once

#include <cstdint>
#include <random>

namespace proxci {

// splitmix64 step; the published hash behind replicate-seed derivation.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Seed for replicate `index` of a study with master seed `master`.
// Deterministic and order-free, so replicates can run on any thread.
inline std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(master ^ splitmix64(index + 1));
}

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Inverse-CDF draw from an unnormalized-free pmf given as a contiguous range.
template <typename Vec>
int sample_pmf(const Vec& pmf, Rng& rng) {
    double u = uniform01(rng);
    double acc = 0.0;
    const int n = static_cast<int>(pmf.size());
    for (int i = 0; i < n; ++i) {
        acc += pmf[i];
        if (u <= acc) return i;
    }
    return n - 1; // guard against accumulated rounding
}

} // namespace proxci

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace gsec {

// std::mt19937_64's output sequence is fixed by the standard, but the
// distributions in <random> are not. Everything seeded in this project draws
// through the helpers below so artifacts are identical across toolchains.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Independent stream seed for item `index` of a run seeded with `seed`
// (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Unbiased integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    if (n <= 1) {
        return 0;
    }
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = rng();
    while (r >= limit) {
        r = rng();
    }
    return r % n;
}

// Box-Muller; one value per call, the pair partner is discarded.
inline double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) {
        u1 = uniform01(rng);
    }
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T>
void shuffle(Rng& rng, std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(values[i - 1], values[j]);
    }
}

// k distinct indices from [0, n), returned in ascending order.
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    if (k >= n) {
        return pool;
    }
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace gsec

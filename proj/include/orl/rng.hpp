#pragma once

#include <cstdint>
#include <vector>

#include "orl/common.hpp"

namespace orl {

// splitmix64, used both as a seed mixer and for deriving independent streams.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Derives the seed of an independent stream from a parent seed and a key.
// Streams per (dataset, epoch, minibatch, role) are obtained by chaining.
inline uint64_t derive_seed(uint64_t seed, uint64_t key) {
    return splitmix64(seed ^ splitmix64(key + 0x632BE59BD9B4E019ULL));
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t seed, const std::string& key) {
    return derive_seed(seed, fnv1a64(key));
}

// PCG32 (Melissa O'Neill's pcg32_oneseq). Portable, seedable, 64-bit state.
// All randomness in the project flows through this generator so results are
// reproducible across platforms and languages.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        state_ = 0;
        next_u32();
        state_ += splitmix64(seed);
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + 1442695040888963407ULL;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        uint64_t lo = next_u32();
        return (hi << 32) | lo;
    }

    // Uniform on [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without caching the second variate; costs two uniforms per
    // draw but keeps the stream layout trivial to reason about.
    double normal() {
        double u1 = 1.0 - uniform();  // (0,1], keeps log finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Unbiased integer in [0, n).
    uint32_t below(uint32_t n) {
        uint32_t threshold = (-n) % n;
        for (;;) {
            uint32_t r = next_u32();
            if (r >= threshold) return r % n;
        }
    }

    // Fisher-Yates permutation of 0..n-1.
    std::vector<Index> permutation(Index n) {
        std::vector<Index> p(static_cast<size_t>(n));
        for (Index i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        for (Index i = n - 1; i > 0; --i) {
            Index j = static_cast<Index>(below(static_cast<uint32_t>(i + 1)));
            std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
        }
        return p;
    }

private:
    uint64_t state_;
};

}  // namespace orl

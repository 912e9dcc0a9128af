// rng.hpp - seeded random sources.
//
// Engine output of std::mt19937_64 is fixed by the standard, but the
// std::*_distribution adaptors are not, so uniform reals are derived from raw
// engine bits here to keep results identical across standard libraries.
//
// StreamKey/CounterStream give an independent stream per (seed, a, b, c)
// tuple, e.g. (seed, epoch, batch, example), so that crafting examples in any
// order or on any worker draws the same numbers.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "core.hpp"

namespace dpaat {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// [0, 1) with 53 bits of resolution.
inline double unit_double(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return unit_double(engine_()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do v = engine_();
        while (v >= limit);
        return v % n;
    }

    // Fisher-Yates with this generator's integers.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

private:
    std::mt19937_64 engine_;
};

struct StreamKey {
    std::uint64_t seed = 0;
    std::uint64_t a = 0;
    std::uint64_t b = 0;
    std::uint64_t c = 0;

    StreamKey with_c(std::uint64_t v) const { return {seed, a, b, v}; }
};

// Counter-based stream: the n-th draw is a pure function of (key, n).
class CounterStream {
public:
    explicit CounterStream(const StreamKey& key)
        : base_(splitmix64(splitmix64(splitmix64(splitmix64(key.seed) ^ key.a) ^ key.b) ^ key.c)) {}

    std::uint64_t next() { return splitmix64(base_ + 0x632be59bd9b4e019ULL * ++counter_); }
    double uniform() { return unit_double(next()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

private:
    std::uint64_t base_;
    std::uint64_t counter_ = 0;
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return splitmix64(seed ^ splitmix64(tag)); }

} // namespace dpaat

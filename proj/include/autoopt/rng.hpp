#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace autoopt {

// Counter-based splitmix64. value = mix(seed + counter * golden); jumping to
// any counter is O(1), so independent child streams can be split off a parent
// without sharing state, and every draw is a pure function of (seed, counter).
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), counter_(0) {}

    uint64_t next_u64() { return mix(seed_ + (++counter_) * kGolden); }

    // uniform in [0, 1) with 53 random bits
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // unbiased integer in [0, n) by rejection on masked bits
    uint64_t next_below(uint64_t n) {
        if (n == 0) throw std::invalid_argument("next_below: n must be positive");
        uint64_t mask = ~uint64_t(0) >> __builtin_clzll(n | 1);
        uint64_t v;
        do {
            v = next_u64() & mask;
        } while (v >= n);
        return v;
    }

    // standard normal via Box-Muller; caches the second deviate of each pair
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 0x1.0p-100) u1 = 0x1.0p-100;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Fisher-Yates permutation of 0..n-1
    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> p(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        for (int64_t i = n - 1; i > 0; --i) {
            int64_t j = static_cast<int64_t>(next_below(static_cast<uint64_t>(i + 1)));
            std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
        }
        return p;
    }

    // independent child stream; derive(k) for distinct k never collides with
    // the parent sequence (the child seed is a full mix, not an offset)
    Rng derive(uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + kGolden))); }

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

private:
    static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t counter_;
    bool have_spare_ = false;
    double spare_ = 0;
};

}  // namespace autoopt

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fcbswin/common.hpp"

namespace fcbswin {

// Fully specified PRNG so partitions and augmentations are reproducible
// bit-for-bit across platforms. splitmix64 finalizer (Steele et al.).
inline uint64_t splitmix64_mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    /// Stream keyed by several components, e.g. (global_seed, epoch, sample).
    /// Identical keys yield identical draw sequences.
    static Rng keyed(std::initializer_list<uint64_t> key) {
        uint64_t s = 0x6a09e667f3bcc908ULL;
        for (uint64_t k : key) s = splitmix64_mix(s ^ splitmix64_mix(k));
        return Rng(s);
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Unbiased integer in [0, n).
    uint64_t next_below(uint64_t n) {
        check(n > 0, "next_below(0)");
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    /// Uniform in [0, 1) with 53 bits of randomness.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (one value per call; no cached pair,
    /// keeps the draw count deterministic per call site).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Normal(0, sigma) resampled until |x| <= 2*sigma.
    double truncated_normal(double sigma) {
        for (;;) {
            double v = normal() * sigma;
            if (std::abs(v) <= 2.0 * sigma) return v;
        }
    }

    /// In-place Fisher-Yates shuffle.
    template <typename Seq>
    void shuffle(Seq& seq) {
        for (size_t i = seq.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(seq[i - 1], seq[j]);
        }
    }

private:
    uint64_t state_;
};

}  // namespace fcbswin

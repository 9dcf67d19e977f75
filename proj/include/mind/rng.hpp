#pragma once
#include <cmath>
#include <cstdint>

namespace mind {

// Deterministic SplitMix64 stream. Streams derived with keyed() are
// independent for distinct (seed, stream) pairs, which is what makes
// per-sample noise draws reproducible regardless of scheduling order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix64(seed + GOLDEN)) {}

    static std::uint64_t mix64(std::uint64_t z) {
        z ^= z >> 33; z *= 0xff51afd7ed558ccdULL;
        z ^= z >> 33; z *= 0xc4ceb9fe1a85ec53ULL;
        z ^= z >> 33;
        return z;
    }

    static Rng keyed(std::uint64_t seed, std::uint64_t stream) {
        Rng r(0);
        r.state_ = mix64(seed + GOLDEN * (stream + 0x632be59bd9b4e019ULL));
        r.has_spare_ = false;
        return r;
    }

    std::uint64_t next_u64() {
        state_ += GOLDEN;
        std::uint64_t z = state_;
        z ^= z >> 30; z *= 0xbf58476d1ce4e5b9ULL;
        z ^= z >> 27; z *= 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return z;
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Unbiased uniform integer in [0, n).
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t t = (0 - n) % n;  // 2^64 mod n
        for (;;) {
            std::uint64_t x = next_u64();
            if (x >= t) return x % n;
        }
    }

    /// Standard normal via Box-Muller (pairs cached).
    double normal() {
        if (has_spare_) { has_spare_ = false; return spare_; }
        const double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0,1]
        const double u2 = double(next_u64() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 6.28318530717958647692 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    /// Poisson draw: Knuth product method below mean 30, Hörmann's PTRS above.
    long long poisson(double mean) {
        if (!(mean > 0.0)) return 0;
        if (mean < 30.0) {
            const double L = std::exp(-mean);
            double p = 1.0;
            long long k = -1;
            do { ++k; p *= next_double(); } while (p > L);
            return k;
        }
        const double b = 0.931 + 2.53 * std::sqrt(mean);
        const double a = -0.059 + 0.02483 * b;
        const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double U = next_double() - 0.5;
            const double V = next_double();
            const double us = 0.5 - std::fabs(U);
            const double kf = std::floor((2.0 * a / us + b) * U + mean + 0.43);
            if (us >= 0.07 && V <= vr) return (long long)kf;
            if (kf < 0.0 || (us < 0.013 && V > us)) continue;
            if (std::log(V * inv_alpha / (a / (us * us) + b)) <=
                kf * std::log(mean) - mean - std::lgamma(kf + 1.0))
                return (long long)kf;
        }
    }

private:
    static constexpr std::uint64_t GOLDEN = 0x9e3779b97f4a7c15ULL;
    std::uint64_t state_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mind

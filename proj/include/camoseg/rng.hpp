#pragma once

#include <cmath>
#include <cstdint>

namespace camoseg {

// Deterministic splittable RNG. We avoid std::*_distribution because its
// output is not pinned across standard library versions, and golden tests
// depend on exact streams.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix(seed + 0x9e3779b97f4a7c15ULL)) {}

    uint64_t next_u64() {
        // xorshift64* on a splitmix-initialized state
        uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dULL;
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (the spare is kept)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // integer in [0, n)
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Independent stream derived from this seed and a label, for
    // order-independent worker RNGs.
    static uint64_t derive(uint64_t seed, uint64_t a, uint64_t b = 0) {
        return splitmix(splitmix(seed ^ (a * 0xff51afd7ed558ccdULL)) ^ (b * 0xc4ceb9fe1a85ec53ULL));
    }

private:
    static uint64_t splitmix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace camoseg

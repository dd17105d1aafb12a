#pragma once

#include <cmath>
#include <cstdint>

namespace specmap {

// Deterministic splitmix64 generator. All stochastic code in this library
// goes through this class so that results are reproducible across platforms
// and standard-library versions (std:: distributions are not portable).
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    // Independent stream keyed by (seed, stream). Used to give each dataset
    // record / transmitter / sweep point its own generator.
    static Rng derive(uint64_t seed, uint64_t stream) {
        Rng mix(seed ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
        mix.next_u64();
        mix.next_u64();
        return mix;
    }

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound). bound must be > 0.
    uint64_t next_below(uint64_t bound) {
        // rejection sampling to avoid modulo bias
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % bound;
    }

    // Uniform integer in [lo, hi] inclusive.
    int64_t next_int(int64_t lo, int64_t hi) {
        return lo + int64_t(next_below(uint64_t(hi - lo + 1)));
    }

    // Standard normal via Box-Muller; second value cached.
    double next_normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

  private:
    uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace specmap

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pedro {

// Integer-only generator used for task corpora so that a seed produces the
// same data on every platform. std::uniform_int_distribution is
// implementation-defined, so we avoid it entirely.
struct SplitMix64 {
    uint64_t state;

    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        state += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform integer in [0, bound) via 128-bit multiply-shift.
    uint64_t below(uint64_t bound) {
        return static_cast<uint64_t>(
            (static_cast<__uint128_t>(next()) * bound) >> 64);
    }

    // Uniform double in [0, 1).
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

// Gaussian sampler over mt19937 with an explicit Box-Muller transform.
// mt19937 output is fully specified by the standard; std::normal_distribution
// is not, so we do the transform ourselves.
class GaussianRng {
  public:
    explicit GaussianRng(uint64_t seed) : engine_(static_cast<uint32_t>(seed)) {}

    double sample() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = unit();
        const double u2 = unit();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        have_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    double sample(double mean, double stddev) { return mean + stddev * sample(); }

  private:
    double unit() {
        const uint64_t hi = engine_();
        const uint64_t lo = engine_();
        return static_cast<double>(((hi << 32) | lo) >> 11) * 0x1.0p-53;
    }

    std::mt19937 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace pedro

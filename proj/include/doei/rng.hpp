#pragma once

#include <cmath>
#include <cstdint>

namespace doei {

// Counter-style PRNG (splitmix64). Self-contained so that streams are
// bit-identical across platforms and stdlib versions; std::normal_distribution
// is implementation-defined and would break byte-reproducible outputs.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Box-Muller; consumes exactly two uniforms per draw (no cached pair,
    // keeps the stream position predictable).
    double normal() {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    // Standard ViT-style truncated normal: resample outside +/- clip sigmas.
    double truncated_normal(double std_dev, double clip = 2.0) {
        double z = normal();
        while (std::fabs(z) > clip) z = normal();
        return z * std_dev;
    }

    // Derives an independent stream seed from (seed, counter); used for
    // order-independent per-sample generation.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t counter) {
        std::uint64_t z = seed ^ (counter * 0xD1B54A32D192ED03ull + 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

  private:
    std::uint64_t state_;
};

}  // namespace doei

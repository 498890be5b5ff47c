#pragma once

#include <cmath>
#include <cstdint>

namespace scalevar {

// Counter-based pseudo-random generator built on the SplitMix64 finalizer.
// Every draw is a pure function of (key, counter), so independent substreams
// can be derived by hashing tags into the key. This keeps all sampling
// reproducible regardless of evaluation order or caching strategy.
class Rng {
public:
    explicit Rng(std::uint64_t key) : key_(key) {}

    // Derive an independent substream. derive(k, a) != derive(k, b) for a != b.
    Rng derive(std::uint64_t tag) const { return Rng(mix(key_, tag)); }
    Rng derive(std::uint64_t tag_a, std::uint64_t tag_b) const {
        return Rng(mix(mix(key_, tag_a), tag_b));
    }

    std::uint64_t next_u64() { return mix(key_, counter_++); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller. Draws two uniforms per call; no cached
    // spare, so the stream position stays a simple function of call count.
    double next_gauss() {
        double u1 = next_double();
        double u2 = next_double();
        // Guard log(0).
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Uniform integer in [0, n). Lemire multiply-shift reduction; the
    // 2^-64-scale bias is irrelevant at the sizes used here.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    static std::uint64_t mix(std::uint64_t key, std::uint64_t v) {
        std::uint64_t z = key + 0x9E3779B97F4A7C15ull * (v + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace scalevar

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace cellmixer {

// Deterministic, platform-stable random streams. Standard <random>
// distributions are implementation-defined, so everything that must be
// bit-reproducible (phantoms, mixing, training batches) goes through this.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// xoshiro256++ core seeded via splitmix64.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        for (auto& w : s_) w = splitmix64(seed);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0,1)
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Unbiased integer in [0,n), n > 0 (Lemire's method).
    int uniform_int(int n) {
        const std::uint64_t un = std::uint64_t(n);
        std::uint64_t x = next_u64();
        __uint128_t m = __uint128_t(x) * un;
        std::uint64_t l = std::uint64_t(m);
        if (l < un) {
            const std::uint64_t t = (0 - un) % un;
            while (l < t) {
                x = next_u64();
                m = __uint128_t(x) * un;
                l = std::uint64_t(m);
            }
        }
        return int(m >> 64);
    }

    // Box-Muller; consumes two uniforms per call, no cached spare.
    double normal() {
        const double u1 = 1.0 - next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool coin() { return (next_u64() >> 63) != 0; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

// Stream derivation: (seed, tag, a, b) -> independent generator. Used so that
// per-image / per-sample / per-iteration streams do not depend on scheduling.
inline Rng derive_rng(std::uint64_t seed, std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t st = seed;
    splitmix64(st);
    st ^= fnv1a64(tag);
    splitmix64(st);
    st ^= a * 0x9e3779b97f4a7c15ULL;
    splitmix64(st);
    st ^= b * 0xd1b54a32d192ed03ULL;
    return Rng(splitmix64(st) ^ st);
}

} // namespace cellmixer

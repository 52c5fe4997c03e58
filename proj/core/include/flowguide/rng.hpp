#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace flowguide {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

// Deterministic, platform-independent RNG (xoshiro256++ seeded through
// splitmix64). All sampling in the project goes through this class so that
// identical seeds give bit-identical results regardless of standard library
// or thread count. Parallel work derives child streams with split() or the
// stateless from_path().
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = detail::splitmix64(sm);
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

    // Uniform double in [0, 1), 53 bits of mantissa.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal by Box-Muller. Draws a full pair; 2-D consumers should
    // prefer normal2() so no variate is discarded.
    double normal() { return normal2().first; }

    std::pair<double, double> normal2() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        return {r * std::cos(a), r * std::sin(a)};
    }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection-free modulo bias is irrelevant at our n << 2^64, but use
        // the multiply-shift trick anyway.
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Independent child stream.
    Rng split() { return Rng(next_u64() ^ 0xd1b54a32d192ed03ULL); }

    // Stateless derivation of a stream from a root seed and a coordinate
    // path, e.g. {sample_index, ode_step}. Used so per-element streams do not
    // depend on scheduling order.
    static Rng from_path(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
        std::uint64_t h = root ^ 0x6a09e667f3bcc909ULL;
        for (std::uint64_t p : path) {
            h ^= p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
            std::uint64_t s = h;
            h = detail::splitmix64(s);
        }
        return Rng(h);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
};

}  // namespace flowguide

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace winq {

// splitmix64: seed expansion / stream derivation.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t n,
                                   std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic RNG with named substreams. Gaussian sampling uses explicit
// Box-Muller so the byte stream does not depend on the standard library's
// normal_distribution implementation.
class SplitRng {
public:
    explicit SplitRng(std::uint64_t seed) : eng_(splitmix64(seed)) {}
    SplitRng(std::uint64_t seed, std::string_view stream)
        : eng_(splitmix64(seed ^ fnv1a64(stream))) {}
    SplitRng(std::uint64_t seed, std::string_view stream, std::uint64_t index)
        : eng_(splitmix64(splitmix64(seed ^ fnv1a64(stream)) + index)) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in (0, 1].
    double uniform01() {
        return (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // One Gaussian sample per call; consumes two uniforms (no caching, so the
    // stream position is a pure function of the call count).
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double rademacher() { return (eng_() & 1ULL) ? 1.0 : -1.0; }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // multiply-shift; bias is negligible for n << 2^64
        unsigned __int128 m = static_cast<unsigned __int128>(eng_()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace winq

#pragma once

#include <cmath>
#include <cstdint>

namespace openparts {

// Counter-based generator: output i is a fixed mix of (seed, i), so the stream
// is fully determined by the seed plus the number of draws already consumed.
// The mixing function is the splitmix64 finalizer, which is invertible and
// equidistributed over 64-bit counters.
struct RngState {
    uint64_t seed = 0;
    uint64_t pos = 0;

    explicit RngState(uint64_t s = 0) : seed(s), pos(0) {}

    uint64_t next_u64() {
        uint64_t z = seed + (++pos) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // (0, 1), both endpoints excluded; safe for log() and log(-log())
    double uniform_open() {
        return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52;
    }

    // Box-Muller, two uniforms per draw, no cached spare so the stream
    // position stays a pure function of the draw count.
    double normal() {
        double u1 = uniform_open();
        double u2 = uniform_open();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Integer in [0, n)
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Derive an independent stream; used to give each sample its own
    // reproducible generator regardless of processing order.
    RngState fork(uint64_t stream) const {
        uint64_t z = seed ^ (0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL);
        z = (z ^ (z >> 30)) * 0x94D049BB133111EBULL;
        z = (z ^ (z >> 27)) * 0x9E3779B97F4A7C15ULL;
        return RngState(z ^ (z >> 31));
    }
};

}  // namespace openparts

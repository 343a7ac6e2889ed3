#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace modereg {

/// Counter-based 64-bit generator (splitmix-style output function over an
/// incrementing counter). A generator is addressed by (seed, stream): the
/// seed identifies the run, the stream separates independent purposes within
/// a run ("gen-synthetic", "cv-folds", ...). Distinct streams give disjoint
/// sequences, so parallel benchmark cells never share draws.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : state_(mix(seed + 0x9e3779b97f4a7c15ULL * mix(stream ^ 0x5851f42d4c957f2dULL))) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform on [0,1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Standard normal via Box-Muller; consumes exactly two uniforms per call.
    double normal() {
        const double u1 = next_double();
        const double u2 = next_double();
        const double radius = std::sqrt(-2.0 * std::log1p(-u1));
        return radius * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Exponential with the given mean (support [0, inf), mode 0).
    double exponential(double mean) { return -mean * std::log1p(-next_double()); }

    /// Uniform integer in [0, n).
    std::uint64_t bounded(std::uint64_t n) { return next_u64() % n; }

    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 33;
        z *= 0xff51afd7ed558ccdULL;
        z ^= z >> 33;
        z *= 0xc4ceb9fe1a85ec53ULL;
        z ^= z >> 33;
        return z;
    }

  private:
    std::uint64_t state_;
};

/// FNV-1a hash of a purpose tag, used as the stream id.
inline std::uint64_t stream_id(std::string_view purpose) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : purpose) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace modereg

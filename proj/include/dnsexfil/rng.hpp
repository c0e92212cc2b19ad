#pragma once

#include <cstdint>
#include <random>

namespace dnsexfil {

/// Seedable random source. All randomness in the lab flows through one of
/// these so a fixed seed reproduces a run bit-for-bit. below() uses rejection
/// sampling instead of std::uniform_int_distribution, whose output sequence
/// is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [0, n). n must be >= 1.
    std::uint32_t below(std::uint32_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return static_cast<std::uint32_t>(v % n);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace dnsexfil

#pragma once

#include <cstdint>
#include <random>

namespace kllab {

// splitmix64 finalizer. Used only to turn (seed, stream) pairs into
// well-separated mt19937_64 seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seedable, splittable generator.
//
// Algorithm: std::mt19937_64 whose seed is mix64(seed ^ mix64(stream)).
// Uniform doubles are (next() >> 11) * 2^-53, which is exactly specified,
// unlike std::uniform_real_distribution. Two Rng objects built from the same
// (seed, stream) produce identical sequences on every conforming platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream), engine_(mix64(seed ^ mix64(stream))) {}

    std::uint64_t next() { return engine_(); }

    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Independent child generator; does not advance this one.
    Rng split(std::uint64_t child) const { return Rng(mix64(seed_ ^ mix64(stream_)), child); }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
};

}  // namespace kllab

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace dmad {

namespace detail {

// 64-bit finalizer (MurmurHash3 fmix64). Full avalanche, bijective.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z ^= z >> 33;
    z *= 0xff51afd7ed558ccdULL;
    z ^= z >> 33;
    z *= 0xc4ceb9fe1a85ec53ULL;
    z ^= z >> 33;
    return z;
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

/// Counter-based random stream: the draw at a given (seed, counter) is a pure
/// function of those two integers, so sequences replay identically across runs
/// and module call orders. Streams for independent consumers (data, dropout,
/// init, lime, ...) are derived with split(), which leaves the parent state
/// untouched.
class RngState {
public:
    explicit RngState(std::uint64_t seed, std::uint64_t counter = 0) noexcept
        : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept {
        return detail::mix64(seed_ ^ (0x9e3779b97f4a7c15ULL * ++counter_));
    }

    /// Uniform in [0, 1) with 53 random bits.
    double next_double() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) noexcept {
        return lo + (hi - lo) * next_double();
    }

    /// Uniform integer in [0, n). n == 0 returns 0.
    std::uint64_t next_below(std::uint64_t n) noexcept {
        if (n == 0) return 0;
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller; consumes exactly two draws.
    double next_normal() noexcept {
        const double u1 = next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Derived stream for a named consumer; independent of this stream's counter.
    RngState split(std::string_view label) const noexcept {
        return RngState(detail::mix64(seed_ ^ detail::fnv1a64(label)));
    }

    /// Derived stream keyed by an integer (subject ids, epoch numbers, ...).
    RngState split(std::uint64_t salt) const noexcept {
        return RngState(detail::mix64(seed_ + 0x632be59bd9b4e019ULL * (salt + 1)));
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

} // namespace dmad

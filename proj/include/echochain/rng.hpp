#pragma once

// Counter-based random streams.
//
// Generator: Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy
// as 1, 2, 3", SC'11). A stream is addressed by a 64-bit key derived from
// (master seed, stream index, purpose tag) through SplitMix64 finalizers, so
// the numbers a worker draws depend only on what it computes, never on which
// thread runs it or in what order.
//
// Normal deviates use the Box-Muller transform on 53-bit uniforms. The
// standard library distributions are avoided on purpose: their output is
// implementation-defined, which would break byte-stable CSV output.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace echochain {

/// Purpose tags keep streams used for different jobs disjoint.
enum class StreamPurpose : std::uint64_t {
    initial_state = 0x1,
    correlation = 0x2,
    rmt_h0 = 0x3,
    rmt_v = 0x4,
    ensemble_sample = 0x5,
    test = 0xff,
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint32_t mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi) noexcept {
    const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(product >> 32);
    return static_cast<std::uint32_t>(product);
}

} // namespace detail

/// Philox4x32 with 10 rounds. Pure function of (key, counter).
class Philox4x32 {
public:
    using block = std::array<std::uint32_t, 4>;

    explicit constexpr Philox4x32(std::uint64_t key) noexcept
        : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

    [[nodiscard]] constexpr block operator()(block ctr) const noexcept {
        std::array<std::uint32_t, 2> k = key_;
        for (int round = 0; round < 10; ++round) {
            std::uint32_t hi0 = 0;
            std::uint32_t hi1 = 0;
            const std::uint32_t lo0 = detail::mulhilo32(kMul0, ctr[0], hi0);
            const std::uint32_t lo1 = detail::mulhilo32(kMul1, ctr[2], hi1);
            ctr = {hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0};
            k[0] += kWeyl0;
            k[1] += kWeyl1;
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53U;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57U;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9U;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85U;
    std::array<std::uint32_t, 2> key_;
};

/// Sequential view over one Philox stream.
class RandomStream {
public:
    explicit constexpr RandomStream(std::uint64_t key) noexcept : gen_(key) {}

    /// Substream for (seed, index, purpose).
    static constexpr RandomStream derive(std::uint64_t seed, std::uint64_t index,
                                         StreamPurpose purpose) noexcept {
        std::uint64_t h = detail::splitmix64(seed);
        h = detail::splitmix64(h ^ index);
        h = detail::splitmix64(h ^ static_cast<std::uint64_t>(purpose));
        return RandomStream(h);
    }

    constexpr std::uint64_t next_u64() noexcept {
        if (used_ >= 2) refill();
        const std::uint64_t out = (static_cast<std::uint64_t>(buf_[2 * used_]) << 32) | buf_[2 * used_ + 1];
        ++used_;
        return out;
    }

    /// Uniform in [0, 1) with 53 random bits.
    constexpr double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in (0, 1], safe for log().
    constexpr double uniform_open0() noexcept { return 1.0 - uniform(); }

    /// Standard normal deviate (Box-Muller, pair cached).
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform_open0()));
        const double phi = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(phi);
        has_spare_ = true;
        return r * std::cos(phi);
    }

    /// Complex Gaussian with E|z|^2 = variance (each component variance/2).
    std::complex<double> complex_normal(double variance) noexcept {
        const double s = std::sqrt(0.5 * variance);
        const double re = normal();
        const double im = normal();
        return {s * re, s * im};
    }

private:
    constexpr void refill() noexcept {
        const Philox4x32::block ctr{static_cast<std::uint32_t>(counter_),
                                    static_cast<std::uint32_t>(counter_ >> 32), 0U, 0U};
        buf_ = gen_(ctr);
        ++counter_;
        used_ = 0;
    }

    Philox4x32 gen_;
    std::uint64_t counter_ = 0;
    Philox4x32::block buf_{};
    int used_ = 2;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace echochain

#pragma once

// Dense state vectors of a ring of L spins 1/2 and the elementary unitary
// kernels of the kicked Ising chain.
//
// Conventions used throughout the library:
//   * site j is bit j of the basis index (site 0 = least significant bit);
//   * sigma^z |0> = +|0>, so z_j = +1 for a cleared bit and -1 for a set bit.

#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "echochain/parallel.hpp"
#include "echochain/rng.hpp"

namespace echochain {

using complex_t = std::complex<double>;

namespace detail {

// Plain real arithmetic: std::complex multiplication goes through the
// Annex G NaN/Inf recovery path unless -fcx-limited-range is in effect.
inline complex_t cmul(const complex_t& a, const complex_t& b) noexcept {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

/// conj(a) * b
inline complex_t cdot(const complex_t& a, const complex_t& b) noexcept {
    return {a.real() * b.real() + a.imag() * b.imag(), a.real() * b.imag() - a.imag() * b.real()};
}

} // namespace detail

/// Number of sites of the ring, 2 <= L <= 24.
class QubitCount {
public:
    static constexpr int kMin = 2;
    static constexpr int kMax = 24;

    constexpr explicit QubitCount(int l) : l_(l) {
        if (l < kMin || l > kMax)
            throw std::invalid_argument("qubit count must lie in [2, 24], got " + std::to_string(l));
    }

    [[nodiscard]] constexpr int value() const noexcept { return l_; }
    [[nodiscard]] constexpr std::size_t dimension() const noexcept { return std::size_t{1} << l_; }
    constexpr bool operator==(const QubitCount&) const = default;

private:
    int l_;
};

/// Field vector b of one homogeneous kick exp(-i b . sigma).
struct KickField {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    [[nodiscard]] double magnitude() const noexcept { return std::sqrt(x * x + y * y + z * z); }
    constexpr bool operator==(const KickField&) const = default;
};

/// Ising coupling J.
struct ChainCoupling {
    double J = 1.0;
};

/// Row-major 2x2 complex matrix.
using Mat2 = std::array<complex_t, 4>;

class StateVector {
public:
    explicit StateVector(QubitCount l) : l_(l), amps_(l.dimension(), complex_t{}) {}
    StateVector(QubitCount l, std::vector<complex_t> amps) : l_(l), amps_(std::move(amps)) {
        if (amps_.size() != l_.dimension())
            throw std::invalid_argument("amplitude count does not match 2^L");
    }

    [[nodiscard]] QubitCount qubits() const noexcept { return l_; }
    [[nodiscard]] int sites() const noexcept { return l_.value(); }
    [[nodiscard]] std::size_t size() const noexcept { return amps_.size(); }

    [[nodiscard]] std::span<complex_t> amplitudes() noexcept { return amps_; }
    [[nodiscard]] std::span<const complex_t> amplitudes() const noexcept { return amps_; }

    complex_t& operator[](std::size_t i) noexcept { return amps_[i]; }
    const complex_t& operator[](std::size_t i) const noexcept { return amps_[i]; }

private:
    QubitCount l_;
    std::vector<complex_t> amps_;
};

// --- construction -----------------------------------------------------------

inline StateVector basis_state(QubitCount l, std::size_t index) {
    if (index >= l.dimension())
        throw std::invalid_argument("basis index " + std::to_string(index) + " out of range for L=" +
                                    std::to_string(l.value()));
    StateVector s(l);
    s[index] = 1.0;
    return s;
}

/// Unnormalized Gaussian state: independent complex normal amplitudes with
/// E|x_i|^2 = 1/N, so E<psi|A|psi> = Tr A / N for every operator A.
inline StateVector random_gaussian_state(QubitCount l, RandomStream& rng) {
    StateVector s(l);
    const double var = 1.0 / static_cast<double>(s.size());
    for (auto& a : s.amplitudes()) a = rng.complex_normal(var);
    return s;
}

// --- reductions -------------------------------------------------------------

inline complex_t inner_product(const StateVector& a, const StateVector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("inner_product: dimension mismatch");
    const auto x = a.amplitudes();
    const auto y = b.amplitudes();
    return blocked_sum<complex_t>(x.size(), [&](std::size_t i) { return detail::cdot(x[i], y[i]); });
}

inline double norm_squared(const StateVector& a) {
    const auto x = a.amplitudes();
    return blocked_sum<double>(x.size(), [&](std::size_t i) { return std::norm(x[i]); });
}

inline double norm(const StateVector& a) { return std::sqrt(norm_squared(a)); }

/// max_i |a_i - b_i|
inline double max_abs_diff(const StateVector& a, const StateVector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: dimension mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// --- Ising phase ------------------------------------------------------------

/// Number of unequal neighbour pairs on the ring, bond (j, j+1 mod L).
inline int domain_walls(std::uint64_t index, int l) noexcept {
    const std::uint64_t mask = (l == 64) ? ~0ULL : ((1ULL << l) - 1);
    const std::uint64_t rotated = ((index >> 1) | (index << (l - 1))) & mask;
    return std::popcount((index ^ rotated) & mask);
}

/// Multiplies amplitude i by exp(-i J sum_j z_j z_{j+1}).
inline void apply_ising_phase_inplace(StateVector& s, ChainCoupling c) {
    const int l = s.sites();
    // sum_j z_j z_{j+1} = L - 2 * (domain walls)
    std::vector<complex_t> table(static_cast<std::size_t>(l) + 1);
    for (int d = 0; d <= l; ++d) table[static_cast<std::size_t>(d)] = std::polar(1.0, -c.J * (l - 2 * d));
    auto amps = s.amplitudes();
    parallel_for(static_cast<std::ptrdiff_t>(amps.size()), [&](std::ptrdiff_t i) {
        auto& a = amps[static_cast<std::size_t>(i)];
        a = detail::cmul(a, table[static_cast<std::size_t>(domain_walls(static_cast<std::uint64_t>(i), l))]);
    });
}

inline StateVector apply_ising_phase(StateVector s, ChainCoupling c) {
    apply_ising_phase_inplace(s, c);
    return s;
}

// --- single-site kicks ------------------------------------------------------

/// exp(-i b . sigma) = cos|b| I - i sin|b| (b/|b|) . sigma
inline Mat2 single_qubit_kick_matrix(const KickField& b) {
    const double mag = b.magnitude();
    if (mag == 0.0) return {1.0, 0.0, 0.0, 1.0};
    const double c = std::cos(mag);
    const double s = std::sin(mag) / mag;
    const complex_t i{0.0, 1.0};
    // b.sigma = [[bz, bx - i by], [bx + i by, -bz]]
    return {c - i * s * b.z, -i * s * complex_t{b.x, -b.y}, -i * s * complex_t{b.x, b.y}, c + i * s * b.z};
}

/// Applies a 2x2 gate to one site.
inline void apply_site_gate_inplace(StateVector& st, int site, const Mat2& g) {
    auto amps = st.amplitudes();
    const std::size_t stride = std::size_t{1} << site;
    const std::size_t blocks = amps.size() / (2 * stride);
    const double g0r = g[0].real(), g0i = g[0].imag(), g1r = g[1].real(), g1i = g[1].imag();
    const double g2r = g[2].real(), g2i = g[2].imag(), g3r = g[3].real(), g3i = g[3].imag();
    auto pair_update = [&](std::size_t i0) {
        const std::size_t i1 = i0 + stride;
        const double ar = amps[i0].real(), ai = amps[i0].imag();
        const double br = amps[i1].real(), bi = amps[i1].imag();
        amps[i0] = {g0r * ar - g0i * ai + g1r * br - g1i * bi, g0r * ai + g0i * ar + g1r * bi + g1i * br};
        amps[i1] = {g2r * ar - g2i * ai + g3r * br - g3i * bi, g2r * ai + g2i * ar + g3r * bi + g3i * br};
    };
    if (blocks >= stride) {
        parallel_for(static_cast<std::ptrdiff_t>(blocks), [&](std::ptrdiff_t b) {
            const std::size_t base = static_cast<std::size_t>(b) * 2 * stride;
            for (std::size_t k = 0; k < stride; ++k) pair_update(base + k);
        });
    } else {
        parallel_for(static_cast<std::ptrdiff_t>(stride), [&](std::ptrdiff_t k) {
            for (std::size_t b = 0; b < blocks; ++b) pair_update(b * 2 * stride + static_cast<std::size_t>(k));
        });
    }
}

/// Same kick on every site; the single-site factors commute.
inline void apply_uniform_kick_inplace(StateVector& st, const KickField& b) {
    if (b.magnitude() == 0.0) return;
    const Mat2 g = single_qubit_kick_matrix(b);
    for (int j = 0; j < st.sites(); ++j) apply_site_gate_inplace(st, j, g);
}

inline StateVector apply_uniform_kick(StateVector s, const KickField& b) {
    apply_uniform_kick_inplace(s, b);
    return s;
}

/// exp(-i delta sigma^x_j) on every site, i.e. exp(-i delta A) with A = sum_j sigma^x_j.
inline void apply_x_rotation_all_inplace(StateVector& s, double delta) {
    apply_uniform_kick_inplace(s, KickField{delta, 0.0, 0.0});
}

inline StateVector apply_x_rotation_all(StateVector s, double delta) {
    apply_x_rotation_all_inplace(s, delta);
    return s;
}

/// A|psi> with A = sum_j sigma^x_j.
inline StateVector apply_total_sigma_x(const StateVector& s) {
    StateVector out(s.qubits());
    const auto in = s.amplitudes();
    auto o = out.amplitudes();
    const int l = s.sites();
    parallel_for(static_cast<std::ptrdiff_t>(in.size()), [&](std::ptrdiff_t ii) {
        const auto i = static_cast<std::size_t>(ii);
        complex_t acc{};
        for (int j = 0; j < l; ++j) acc += in[i ^ (std::size_t{1} << j)];
        o[i] = acc;
    });
    return out;
}

} // namespace echochain

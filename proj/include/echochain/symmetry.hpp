#pragma once

// Ring symmetries of the kicked chain: the rotation R (site j -> j+1), the
// reflection P (site j -> L-1-j), momentum sectors built from rotation orbits,
// and Floquet blocks restricted to one sector.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "echochain/errors.hpp"
#include "echochain/floquet.hpp"
#include "echochain/statevec.hpp"

namespace echochain {

inline std::uint64_t rotate_bits_left(std::uint64_t x, int l) noexcept {
    const std::uint64_t mask = (1ULL << l) - 1;
    return ((x << 1) | (x >> (l - 1))) & mask;
}

inline std::uint64_t reverse_bits(std::uint64_t x, int l) noexcept {
    std::uint64_t r = 0;
    for (int j = 0; j < l; ++j) r |= ((x >> j) & 1ULL) << (l - 1 - j);
    return r;
}

/// R|i_0 i_1 ... i_{L-1}> = |i_{L-1} i_0 ... i_{L-2}>: the occupation of site j
/// moves to site j+1, i.e. a cyclic left shift of the basis index.
inline StateVector rotate_state(const StateVector& s) {
    StateVector out(s.qubits());
    const int l = s.sites();
    for (std::size_t i = 0; i < s.size(); ++i) out[rotate_bits_left(i, l)] = s[i];
    return out;
}

/// P|i_0 ... i_{L-1}> = |i_{L-1} ... i_0>: bit reversal of the basis index.
inline StateVector reflect_state(const StateVector& s) {
    StateVector out(s.qubits());
    const int l = s.sites();
    for (std::size_t i = 0; i < s.size(); ++i) out[reverse_bits(i, l)] = s[i];
    return out;
}

/// Quasi-momentum sector k: the eigenspace of R with eigenvalue exp(2 pi i k / L).
struct MomentumSector {
    int k = 0;
    int L = 2;
};

/// One translation orbit kept in a sector.
struct OrbitRep {
    std::uint64_t rep = 0;  ///< smallest index of the orbit
    int size = 1;           ///< orbit length d, divides L
};

/// Basis of H_k. Vector a is
///     |k, r_a> = d_a^{-1/2} sum_{j=0}^{d_a-1} exp(-2 pi i k j / L) R^j |r_a>,
/// which satisfies R|k, r_a> = exp(+2 pi i k / L) |k, r_a>. Representatives are
/// ordered by value.
class SectorBasis {
public:
    SectorBasis(QubitCount l, int k) : l_(l), k_(k) {
        const int L = l.value();
        if (k < 0 || k >= L) throw std::invalid_argument("momentum index must lie in [0, L)");
        const std::size_t n = l.dimension();
        for (std::uint64_t x = 0; x < n; ++x) {
            std::uint64_t y = x;
            int d = 0;
            bool canonical = true;
            do {
                y = rotate_bits_left(y, L);
                ++d;
                if (y < x) {
                    canonical = false;
                    break;
                }
            } while (y != x);
            if (!canonical) continue;
            if ((static_cast<long long>(k) * d) % L == 0) reps_.push_back({x, d});
        }
        phases_.resize(static_cast<std::size_t>(L));
        for (int j = 0; j < L; ++j)
            phases_[static_cast<std::size_t>(j)] = std::polar(1.0, -2.0 * std::numbers::pi * k * j / L);
    }

    [[nodiscard]] QubitCount qubits() const noexcept { return l_; }
    [[nodiscard]] int k() const noexcept { return k_; }
    [[nodiscard]] std::size_t dimension() const noexcept { return reps_.size(); }
    [[nodiscard]] const std::vector<OrbitRep>& representatives() const noexcept { return reps_; }

    /// Coefficients <k, r_a | psi>.
    [[nodiscard]] Eigen::VectorXcd project(const StateVector& psi) const {
        check(psi);
        const int L = l_.value();
        Eigen::VectorXcd c(static_cast<Eigen::Index>(reps_.size()));
        for (std::size_t a = 0; a < reps_.size(); ++a) {
            const auto& o = reps_[a];
            complex_t acc{};
            std::uint64_t y = o.rep;
            for (int j = 0; j < o.size; ++j) {
                acc += std::conj(phases_[static_cast<std::size_t>(j)]) * psi[y];
                y = rotate_bits_left(y, L);
            }
            c[static_cast<Eigen::Index>(a)] = acc / std::sqrt(static_cast<double>(o.size));
        }
        return c;
    }

    /// psi += sum_a c_a |k, r_a>
    void embed_add(const Eigen::VectorXcd& c, StateVector& psi) const {
        check(psi);
        if (static_cast<std::size_t>(c.size()) != reps_.size())
            throw std::invalid_argument("coefficient vector does not match sector dimension");
        const int L = l_.value();
        for (std::size_t a = 0; a < reps_.size(); ++a) {
            const auto& o = reps_[a];
            const complex_t ca = c[static_cast<Eigen::Index>(a)] / std::sqrt(static_cast<double>(o.size));
            std::uint64_t y = o.rep;
            for (int j = 0; j < o.size; ++j) {
                psi[y] += ca * phases_[static_cast<std::size_t>(j)];
                y = rotate_bits_left(y, L);
            }
        }
    }

    [[nodiscard]] StateVector embed(const Eigen::VectorXcd& c) const {
        StateVector psi(l_);
        embed_add(c, psi);
        return psi;
    }

    /// (representative, orbit size) rows for debugging.
    void write_csv(std::ostream& os) const {
        os << "# L=" << l_.value() << " k=" << k_ << " dim=" << reps_.size() << "\n";
        os << "representative,orbit_size\n";
        for (const auto& o : reps_) os << o.rep << ',' << o.size << '\n';
    }

private:
    void check(const StateVector& psi) const {
        if (!(psi.qubits() == l_)) throw std::invalid_argument("state and sector basis have different L");
    }

    QubitCount l_;
    int k_;
    std::vector<OrbitRep> reps_;
    std::vector<complex_t> phases_;
};

inline SectorBasis build_sector_basis(QubitCount l, int k) { return SectorBasis(l, k); }

inline Eigen::VectorXcd project_state(const StateVector& s, const SectorBasis& b) { return b.project(s); }

/// Sectors 1..ceil(L/2)-1: one member of every (k, L-k) pair, skipping the
/// self-paired k = 0 and k = L/2.
inline std::vector<int> default_spectral_sectors(int L) {
    std::vector<int> ks;
    for (int k = 1; k <= (L + 1) / 2 - 1; ++k) ks.push_back(k);
    return ks;
}

/// Largest sector block stored densely unless the caller raises the guard.
inline constexpr std::size_t kDefaultMaxDenseDimension = 4200;

/// <k,a| U_MKI |k,b>, column b computed by one fast propagation of |k,b>.
inline Eigen::MatrixXcd sector_floquet_matrix(const FloquetSpec& spec, const SectorBasis& basis,
                                              std::size_t max_dim = kDefaultMaxDenseDimension) {
    if (!(spec.L == basis.qubits())) throw std::invalid_argument("spec and sector basis have different L");
    const std::size_t n = basis.dimension();
    if (n > max_dim)
        throw ResourceError("sector dimension " + std::to_string(n) + " exceeds the dense guard " +
                            std::to_string(max_dim));
    Eigen::MatrixXcd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Eigen::VectorXcd e = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t b = 0; b < n; ++b) {
        e.setZero();
        e[static_cast<Eigen::Index>(b)] = 1.0;
        StateVector psi = basis.embed(e);
        mki_step_inplace(psi, spec);
        m.col(static_cast<Eigen::Index>(b)) = basis.project(psi);
    }
    return m;
}

/// Orthonormal bases (columns, in sector coordinates) of the reflection
/// eigenspaces P = +1 and P = -1 inside a self-paired sector (k = 0 or 2k = L).
struct ParitySplit {
    Eigen::MatrixXcd even;
    Eigen::MatrixXcd odd;
};

inline ParitySplit parity_split(const SectorBasis& basis) {
    const int L = basis.qubits().value();
    if (basis.k() != 0 && 2 * basis.k() != L)
        throw std::invalid_argument("parity refinement applies only to k = 0 and k = L/2");
    const auto n = static_cast<Eigen::Index>(basis.dimension());
    Eigen::MatrixXcd p(n, n);
    Eigen::VectorXcd e = Eigen::VectorXcd::Zero(n);
    for (Eigen::Index b = 0; b < n; ++b) {
        e.setZero();
        e[b] = 1.0;
        p.col(b) = basis.project(reflect_state(basis.embed(e)));
    }
    const Eigen::MatrixXcd herm = 0.5 * (p + p.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(herm);
    const auto& ev = es.eigenvalues();
    Eigen::Index n_odd = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        if (ev[i] < 0.0) ++n_odd;
    ParitySplit out;
    out.odd = es.eigenvectors().leftCols(n_odd);
    out.even = es.eigenvectors().rightCols(n - n_odd);
    return out;
}

/// Q^dagger M Q for an invariant subspace spanned by the orthonormal columns of Q.
inline Eigen::MatrixXcd restrict_to(const Eigen::MatrixXcd& m, const Eigen::MatrixXcd& q) {
    return q.adjoint() * m * q;
}

} // namespace echochain

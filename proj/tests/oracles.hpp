#pragma once

// Independent dense constructions used as test oracles. Nothing here calls the
// library kernels: operators are assembled from Kronecker products of Pauli
// matrices and exponentiated with Eigen's general matrix exponential.

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "echochain/statevec.hpp"

namespace oracle {

using cd = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;

inline Mat pauli(char which) {
    Mat p(2, 2);
    const cd i{0.0, 1.0};
    switch (which) {
    case 'x': p << 0, 1, 1, 0; break;
    case 'y': p << 0, -i, i, 0; break;
    case 'z': p << 1, 0, 0, -1; break;
    default: p = Mat::Identity(2, 2);
    }
    return p;
}

inline Mat kron(const Mat& a, const Mat& b) {
    Mat r(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) r.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return r;
}

/// Single-site operator at `site` with site 0 the least significant bit:
/// kron(I_{L-1}, ..., op_site, ..., I_0) ordered from the most significant site.
inline Mat site_op(int l, int site, const Mat& op) {
    Mat r = Mat::Identity(1, 1);
    for (int j = l - 1; j >= 0; --j) r = kron(r, j == site ? op : pauli('i'));
    return r;
}

inline Mat ising_hamiltonian(int l, double j) {
    const auto n = Eigen::Index{1} << l;
    Mat h = Mat::Zero(n, n);
    for (int s = 0; s < l; ++s) h += j * site_op(l, s, pauli('z')) * site_op(l, (s + 1) % l, pauli('z'));
    return h;
}

inline Mat kick_hamiltonian(int l, const echochain::KickField& b) {
    const auto n = Eigen::Index{1} << l;
    Mat h = Mat::Zero(n, n);
    for (int s = 0; s < l; ++s)
        h += b.x * site_op(l, s, pauli('x')) + b.y * site_op(l, s, pauli('y')) + b.z * site_op(l, s, pauli('z'));
    return h;
}

inline Mat total_sigma_x(int l) { return kick_hamiltonian(l, {1.0, 0.0, 0.0}); }

inline Mat expm_minus_i(const Mat& h) {
    const Mat a = cd{0.0, -1.0} * h;
    return a.exp();
}

/// One period: for each kick in order, Ising then kick.
inline Mat floquet(int l, double j, const std::vector<echochain::KickField>& kicks) {
    const Mat ui = expm_minus_i(ising_hamiltonian(l, j));
    const auto n = Eigen::Index{1} << l;
    Mat u = Mat::Identity(n, n);
    for (const auto& b : kicks) u = expm_minus_i(kick_hamiltonian(l, b)) * ui * u;
    return u;
}

inline Mat perturbed_floquet(int l, double j, const std::vector<echochain::KickField>& kicks, double delta) {
    return expm_minus_i(delta * total_sigma_x(l)) * floquet(l, j, kicks);
}

/// Permutation matrix of the ring rotation: site j -> j+1.
inline Mat rotation(int l) {
    const auto n = Eigen::Index{1} << l;
    Mat r = Mat::Zero(n, n);
    for (std::uint64_t x = 0; x < static_cast<std::uint64_t>(n); ++x) {
        std::uint64_t y = 0;
        for (int s = 0; s < l; ++s)
            if ((x >> s) & 1U) y |= 1ULL << ((s + 1) % l);
        r(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = 1.0;
    }
    return r;
}

inline Vec to_eigen(const echochain::StateVector& s) {
    Vec v(static_cast<Eigen::Index>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) v[static_cast<Eigen::Index>(i)] = s[i];
    return v;
}

inline double max_diff(const echochain::StateVector& s, const Vec& v) {
    double m = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) m = std::max(m, std::abs(s[i] - v[static_cast<Eigen::Index>(i)]));
    return m;
}

/// Translation orbits by explicit enumeration of all L rotations.
struct Orbit {
    std::uint64_t min_element;
    int size;
};

inline std::vector<Orbit> brute_force_orbits(int l) {
    const std::uint64_t n = 1ULL << l;
    std::vector<bool> seen(n, false);
    std::vector<Orbit> out;
    for (std::uint64_t x = 0; x < n; ++x) {
        if (seen[x]) continue;
        std::vector<std::uint64_t> members{x};
        std::uint64_t y = x;
        for (int r = 1; r < l; ++r) {
            std::uint64_t z = 0;
            for (int s = 0; s < l; ++s)
                if ((y >> s) & 1U) z |= 1ULL << ((s + 1) % l);
            y = z;
            if (y == x) break;
            members.push_back(y);
        }
        std::uint64_t mn = x;
        for (auto m : members) {
            seen[m] = true;
            mn = std::min(mn, m);
        }
        out.push_back({mn, static_cast<int>(members.size())});
    }
    return out;
}

} // namespace oracle

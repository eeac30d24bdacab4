#pragma once

// Level statistics of Floquet eigenphases: unfolded nearest-neighbour
// spacings, the spacing-ratio statistic, the spectral form factor, and the
// Wigner-surmise and circular-ensemble references they are compared with.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <lapacke.h>

#include "echochain/errors.hpp"
#include "echochain/rng.hpp"

namespace echochain {

/// Eigenphases of one sector block, sorted ascending in [0, 2 pi).
struct EigenphaseList {
    std::vector<double> phases;
    int k = 0;
};

/// Max-norm of U^dagger U - I.
inline double unitarity_defect(const Eigen::MatrixXcd& u) {
    const Eigen::MatrixXcd d = u.adjoint() * u - Eigen::MatrixXcd::Identity(u.rows(), u.cols());
    return d.cwiseAbs().maxCoeff();
}

inline EigenphaseList eigenphases(const Eigen::MatrixXcd& u, int k = 0, double tol = 1e-10) {
    if (u.rows() != u.cols()) throw std::invalid_argument("eigenphases: matrix must be square");
    EigenphaseList out;
    out.k = k;
    if (u.rows() == 0) return out;
    const double defect = unitarity_defect(u);
    if (!(defect <= tol)) throw ValidationError("matrix is not unitary: max |U^dagger U - I| = " + std::to_string(defect));
    Eigen::MatrixXcd a = u;
    Eigen::VectorXcd ev(u.rows());
    const auto n = static_cast<lapack_int>(u.rows());
    const lapack_int info =
        LAPACKE_zgeev(LAPACK_COL_MAJOR, 'N', 'N', n, reinterpret_cast<lapack_complex_double*>(a.data()), n,
                      reinterpret_cast<lapack_complex_double*>(ev.data()), nullptr, 1, nullptr, 1);
    if (info != 0) throw NumericError("zgeev failed with info = " + std::to_string(info));
    out.phases.reserve(static_cast<std::size_t>(ev.size()));
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        double th = std::arg(ev[i]);
        if (th < 0.0) th += 2.0 * std::numbers::pi;
        if (th >= 2.0 * std::numbers::pi - 1e-12) th = 0.0;  // keep exact 1 at phase 0
        out.phases.push_back(th);
    }
    std::sort(out.phases.begin(), out.phases.end());
    return out;
}

/// s_n = N (theta_{n+1} - theta_n) / 2 pi, including the wrap-around spacing,
/// so the N spacings have mean exactly 1.
inline std::vector<double> unfolded_spacings(const EigenphaseList& e) {
    const auto& th = e.phases;
    const std::size_t n = th.size();
    std::vector<double> s;
    if (n < 2) return s;
    s.reserve(n);
    const double scale = static_cast<double>(n) / (2.0 * std::numbers::pi);
    for (std::size_t i = 0; i + 1 < n; ++i) s.push_back(scale * (th[i + 1] - th[i]));
    s.push_back(scale * (th[0] + 2.0 * std::numbers::pi - th[n - 1]));
    return s;
}

/// Mean of r_n = min(s_n, s_{n+1}) / max(s_n, s_{n+1}) over consecutive (cyclic)
/// spacings; needs no unfolding. Returns the sum and the count so that sectors
/// can be pooled.
struct RatioAccumulator {
    double sum = 0.0;
    std::size_t count = 0;
    [[nodiscard]] double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

inline void accumulate_spacing_ratios(const EigenphaseList& e, RatioAccumulator& acc) {
    const auto s = unfolded_spacings(e);
    const std::size_t n = s.size();
    if (n < 2) return;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = s[i];
        const double b = s[(i + 1) % n];
        const double hi = std::max(a, b);
        if (hi <= 0.0) continue;
        acc.sum += std::min(a, b) / hi;
        ++acc.count;
    }
}

inline double mean_spacing_ratio(const EigenphaseList& e) {
    RatioAccumulator acc;
    accumulate_spacing_ratios(e, acc);
    return acc.mean();
}

// --- Wigner surmises ---------------------------------------------------------

/// beta = 1: (pi/2) s exp(-pi s^2/4); beta = 2: (32/pi^2) s^2 exp(-4 s^2/pi).
inline double wigner_surmise(int beta, double s) {
    if (s < 0.0) return 0.0;
    constexpr double pi = std::numbers::pi;
    if (beta == 1) return 0.5 * pi * s * std::exp(-0.25 * pi * s * s);
    if (beta == 2) return 32.0 / (pi * pi) * s * s * std::exp(-4.0 * s * s / pi);
    throw std::invalid_argument("wigner_surmise: beta must be 1 or 2");
}

inline double wigner_surmise_cdf(int beta, double s) {
    if (s <= 0.0) return 0.0;
    constexpr double pi = std::numbers::pi;
    if (beta == 1) return 1.0 - std::exp(-0.25 * pi * s * s);
    if (beta == 2) return std::erf(2.0 * s / std::sqrt(pi)) - 4.0 * s / pi * std::exp(-4.0 * s * s / pi);
    throw std::invalid_argument("wigner_surmise_cdf: beta must be 1 or 2");
}

/// sup_s |F_emp(s) - F_surmise(s)|.
inline double ks_distance_to_surmise(std::vector<double> s, int beta) {
    if (s.empty()) throw std::invalid_argument("ks_distance_to_surmise: no spacings");
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    double d = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double f = wigner_surmise_cdf(beta, s[i]);
        d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
    }
    return d;
}

struct SpacingHistogram {
    std::vector<double> centers;
    std::vector<double> density;   ///< normalized so that sum density * width = fraction inside [0, s_max)
    double width = 0.0;
    std::size_t samples = 0;
};

inline SpacingHistogram nns_density(const std::vector<double>& s, int n_bins = 40, double s_max = 4.0) {
    if (n_bins < 1 || !(s_max > 0.0)) throw std::invalid_argument("nns_density: bad binning");
    SpacingHistogram h;
    h.width = s_max / n_bins;
    h.samples = s.size();
    h.centers.resize(static_cast<std::size_t>(n_bins));
    h.density.assign(static_cast<std::size_t>(n_bins), 0.0);
    for (int b = 0; b < n_bins; ++b) h.centers[static_cast<std::size_t>(b)] = (b + 0.5) * h.width;
    if (s.empty()) return h;
    for (double x : s) {
        if (x < 0.0 || x >= s_max) continue;
        const auto b = std::min(static_cast<std::size_t>(x / h.width), static_cast<std::size_t>(n_bins - 1));
        h.density[b] += 1.0;
    }
    for (auto& v : h.density) v /= static_cast<double>(s.size()) * h.width;
    return h;
}

// --- spectral form factor ------------------------------------------------------

/// Infinite-size form factor K(tau) of the circular ensembles.
inline double form_factor_reference(int beta, double tau) {
    if (tau < 0.0) tau = -tau;
    if (beta == 2) return std::min(tau, 1.0);
    if (beta == 1) {
        if (tau <= 1.0) return 2.0 * tau - tau * std::log1p(2.0 * tau);
        return 2.0 - tau * std::log((2.0 * tau + 1.0) / (2.0 * tau - 1.0));
    }
    throw std::invalid_argument("form_factor_reference: beta must be 1 or 2");
}

/// K(t) = |sum_n exp(-i theta_n t)|^2 / N for t = 0..t_max.
inline std::vector<double> sector_form_factor(const EigenphaseList& e, int t_max) {
    std::vector<double> k(static_cast<std::size_t>(t_max) + 1, 0.0);
    const std::size_t n = e.phases.size();
    if (n == 0) return k;
    std::vector<std::complex<double>> z(n), w(n, {1.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) z[i] = std::polar(1.0, -e.phases[i]);
    for (int t = 0; t <= t_max; ++t) {
        std::complex<double> acc{};
        for (std::size_t i = 0; i < n; ++i) {
            acc += w[i];
            w[i] *= z[i];
        }
        k[static_cast<std::size_t>(t)] = std::norm(acc) / static_cast<double>(n);
        if (t % 64 == 63)  // renormalize accumulated powers
            for (std::size_t i = 0; i < n; ++i) w[i] = std::polar(1.0, -e.phases[i] * (t + 1));
    }
    return k;
}

struct FormFactorCurve {
    std::vector<double> tau;
    std::vector<double> k;
    std::vector<double> k_ref;
};

/// Sector form factors are put on the common axis tau = t / N_k (linear
/// interpolation in t), averaged over sectors, then boxcar-smoothed with a
/// centred window of full width `window` in tau that shrinks symmetrically
/// near the ends of the grid.
inline FormFactorCurve spectral_form_factor(const std::vector<EigenphaseList>& sectors, int beta,
                                            double tau_max = 2.0, double window = 0.15) {
    if (sectors.empty()) throw std::invalid_argument("spectral_form_factor: no sectors");
    if (!(tau_max > 0.0) || window < 0.0) throw std::invalid_argument("spectral_form_factor: bad axis");
    std::size_t n_max = 0;
    for (const auto& s : sectors) n_max = std::max(n_max, s.phases.size());
    if (n_max == 0) throw std::invalid_argument("spectral_form_factor: empty sectors");
    const double dtau = 1.0 / static_cast<double>(n_max);
    const auto n_grid = static_cast<std::size_t>(std::floor(tau_max / dtau + 1e-9));

    FormFactorCurve out;
    out.tau.resize(n_grid);
    for (std::size_t g = 0; g < n_grid; ++g) out.tau[g] = static_cast<double>(g + 1) * dtau;
    std::vector<double> avg(n_grid, 0.0);
    std::size_t used = 0;
    for (const auto& s : sectors) {
        const std::size_t n = s.phases.size();
        if (n == 0) continue;
        const int t_max = static_cast<int>(std::ceil(tau_max * static_cast<double>(n))) + 1;
        const auto kt = sector_form_factor(s, t_max);
        for (std::size_t g = 0; g < n_grid; ++g) {
            const double t = out.tau[g] * static_cast<double>(n);
            const auto t0 = static_cast<std::size_t>(std::floor(t));
            const double frac = t - static_cast<double>(t0);
            const double v = t0 + 1 < kt.size() ? (1.0 - frac) * kt[t0] + frac * kt[t0 + 1] : kt.back();
            avg[g] += v;
        }
        ++used;
    }
    for (auto& v : avg) v /= static_cast<double>(used);

    out.k.resize(n_grid);
    const double half = 0.5 * window;
    const double lo = out.tau.front();
    const double hi = out.tau.back();
    // prefix sums for O(1) window means
    std::vector<double> prefix(n_grid + 1, 0.0);
    for (std::size_t g = 0; g < n_grid; ++g) prefix[g + 1] = prefix[g] + avg[g];
    for (std::size_t g = 0; g < n_grid; ++g) {
        const double h = std::min({half, out.tau[g] - lo, hi - out.tau[g]});
        const auto w = static_cast<std::size_t>(std::floor(h / dtau + 1e-9));
        out.k[g] = (prefix[g + w + 1] - prefix[g - w]) / static_cast<double>(2 * w + 1);
    }
    out.k_ref.resize(n_grid);
    for (std::size_t g = 0; g < n_grid; ++g) out.k_ref[g] = form_factor_reference(beta, out.tau[g]);
    return out;
}

// --- circular-ensemble Monte Carlo references -----------------------------------

/// Haar-random N x N unitary: QR of a complex Ginibre matrix with the phases
/// of diag(R) absorbed into Q.
inline Eigen::MatrixXcd sample_cue(int n, RandomStream& rng) {
    Eigen::MatrixXcd z(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) z(i, j) = rng.complex_normal(1.0);
    Eigen::HouseholderQR<Eigen::MatrixXcd> qr(z);
    Eigen::MatrixXcd q = qr.householderQ() * Eigen::MatrixXcd::Identity(n, n);
    const Eigen::MatrixXcd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j) {
        const auto d = r(j, j);
        const double a = std::abs(d);
        q.col(j) *= (a > 0.0 ? d / a : std::complex<double>{1.0, 0.0});
    }
    return q;
}

/// COE member W^T W with W Haar-distributed.
inline Eigen::MatrixXcd sample_coe(int n, RandomStream& rng) {
    const Eigen::MatrixXcd w = sample_cue(n, rng);
    return w.transpose() * w;
}

/// Pooled spacings and spacing ratios of `realizations` circular-ensemble
/// matrices of size n.
struct CircularReference {
    std::vector<double> spacings;
    RatioAccumulator ratios;
};

inline CircularReference circular_ensemble_reference(int beta, int n, int realizations, std::uint64_t seed) {
    if (beta != 1 && beta != 2) throw std::invalid_argument("circular_ensemble_reference: beta must be 1 or 2");
    if (n < 2 || realizations < 1) throw std::invalid_argument("circular_ensemble_reference: bad size");
    CircularReference ref;
    for (int r = 0; r < realizations; ++r) {
        auto rng = RandomStream::derive(seed, static_cast<std::uint64_t>(r), StreamPurpose::ensemble_sample);
        const Eigen::MatrixXcd u = beta == 2 ? sample_cue(n, rng) : sample_coe(n, rng);
        const auto e = eigenphases(u, 0, 1e-8);
        const auto s = unfolded_spacings(e);
        ref.spacings.insert(ref.spacings.end(), s.begin(), s.end());
        accumulate_spacing_ratios(e, ref.ratios);
    }
    return ref;
}

} // namespace echochain

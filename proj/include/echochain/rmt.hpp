#pragma once

// Random-matrix references for the fidelity amplitude in Heisenberg-time
// units: linear response, exponentiated linear response, the exact GUE
// result, and a Monte Carlo ensemble oracle.
//
// Perturbation convention: H_eps = H_0 + (sqrt(eps) / 2 pi) V with V drawn from
// the same Gaussian ensemble as H_0, off-diagonal variance 1, diagonal
// variance 1 (GUE) or 2 (GOE), and H_0 unfolded to unit mean level spacing.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <lapacke.h>

#include "echochain/errors.hpp"
#include "echochain/rng.hpp"

namespace echochain {

// --- s(x) = sinh(x)/x ----------------------------------------------------------

struct SValue {
    double s = 1.0;   ///< sinh(x)/x
    double ds = 0.0;  ///< d/dx sinh(x)/x = cosh(x)/x - sinh(x)/x^2
};

namespace detail {

/// Taylor series, accurate to roundoff for |x| < 0.5.
inline SValue s_series(double x) {
    const double x2 = x * x;
    double term = 1.0;  // x^{2n} / (2n+1)!
    double s = 1.0;
    double ds = 0.0;
    for (int n = 1; n < 12; ++n) {
        term *= x2 / ((2.0 * n) * (2.0 * n + 1.0));
        s += term;
        ds += 2.0 * n * term / x;
    }
    return {s, x == 0.0 ? 0.0 : ds};
}

} // namespace detail

inline SValue s_function(double x) {
    const double ax = std::abs(x);
    if (ax < 0.5) return detail::s_series(x);
    const double sh = std::sinh(x);
    const double ch = std::cosh(x);
    return {sh / x, ch / x - sh / (x * x)};
}

/// exp(-|x|) * (s(x), s'(x)): finite for every finite x, so products such as
/// exp(-a) s(x) can be formed as exp(|x| - a) * scaled without overflow.
inline SValue s_function_scaled(double x) {
    const double ax = std::abs(x);
    if (ax < 0.5) {
        const SValue v = detail::s_series(x);
        const double e = std::exp(-ax);
        return {v.s * e, v.ds * e};
    }
    const double em = std::exp(-2.0 * ax);  // e^{-2|x|}
    // sinh|x| e^{-|x|} = (1 - e^{-2|x|})/2,  cosh|x| e^{-|x|} = (1 + e^{-2|x|})/2
    const double sh = 0.5 * (1.0 - em);
    const double ch = 0.5 * (1.0 + em);
    const double s = sh / ax;
    double ds = ch / ax - sh / (ax * ax);
    if (x < 0.0) ds = -ds;
    return {s, ds};
}

// --- exact GUE fidelity amplitude ------------------------------------------------

/// Form of the t > 1 branch.
///   printed:    exp(-eps t^2/2) [s(eps t)   - s'(eps t/2) / t]
///   continuous: exp(-eps t^2/2) [s(eps t/2) - s'(eps t/2) / t]
/// The second one is the only variant among the printed-adjacent forms that
/// joins the t <= 1 branch continuously at t = 1.
enum class LateBranch { printed, continuous };

inline std::string to_string(LateBranch b) { return b == LateBranch::printed ? "printed" : "continuous"; }

/// Default late-time branch, chosen by the Monte Carlo cross-validation.
inline constexpr LateBranch kDefaultLateBranch = LateBranch::continuous;

/// t <= 1: exp(-eps t/2) [s(eps t^2/2) - t s'(eps t^2/2)].
inline double gue_exact_early(double epsilon, double t) {
    const double x = 0.5 * epsilon * t * t;
    const SValue v = s_function_scaled(x);
    return std::exp(x - 0.5 * epsilon * t) * (v.s - t * v.ds);
}

inline double gue_exact_late(double epsilon, double t, LateBranch branch) {
    const double damp = -0.5 * epsilon * t * t;
    const double xs = branch == LateBranch::printed ? epsilon * t : 0.5 * epsilon * t;
    const double xd = 0.5 * epsilon * t;
    const SValue a = s_function_scaled(xs);
    const SValue b = s_function_scaled(xd);
    return std::exp(damp + xs) * a.s - std::exp(damp + xd) * b.ds / t;
}

inline double gue_exact_fidelity(double epsilon, double t, LateBranch branch = kDefaultLateBranch) {
    if (t < 0.0 || epsilon < 0.0) throw std::invalid_argument("gue_exact_fidelity: t and epsilon must be >= 0");
    return t <= 1.0 ? gue_exact_early(epsilon, t) : gue_exact_late(epsilon, t, branch);
}

// --- two-level form factor and correlation integral --------------------------------

inline double b2(int beta, double t) {
    if (t < 0.0) t = -t;
    if (beta == 2) return t <= 1.0 ? 1.0 - t : 0.0;
    if (beta == 1) {
        if (t <= 1.0) return 1.0 - 2.0 * t + t * std::log1p(2.0 * t);
        return -1.0 + t * std::log((2.0 * t + 1.0) / (2.0 * t - 1.0));
    }
    throw std::invalid_argument("b2: beta must be 1 or 2");
}

/// C(t) = t^2/beta + t/2 - int_0^t dt' int_0^t' dt'' b2(t''); the double
/// integral equals int_0^t (t - u) b2(u) du.
inline double c_rmt(int beta, double t) {
    if (beta != 1 && beta != 2) throw std::invalid_argument("c_rmt: beta must be 1 or 2");
    if (t < 0.0) throw std::invalid_argument("c_rmt: t must be >= 0");
    if (beta == 2) return t <= 1.0 ? 0.5 * t + t * t * t / 6.0 : 0.5 * t * t + 1.0 / 6.0;
    using boost::math::quadrature::gauss_kronrod;
    auto integrand = [t](double u) { return (t - u) * b2(1, u); };
    double total = 0.0;
    double err_total = 0.0;
    auto piece = [&](double a, double b) {
        if (b <= a) return;
        double err = 0.0;
        total += gauss_kronrod<double, 31>::integrate(integrand, a, b, 20, 1e-14, &err);
        err_total += err;
    };
    piece(0.0, std::min(t, 1.0));
    piece(1.0, t);
    if (!(err_total <= 1e-10))
        throw NumericError("c_rmt: quadrature error estimate " + std::to_string(err_total) + " at t = " +
                           std::to_string(t));
    return t * t + 0.5 * t - total;
}

inline double lr_fidelity(double epsilon, int beta, double t) { return 1.0 - epsilon * c_rmt(beta, t); }
inline double elr_fidelity(double epsilon, int beta, double t) { return std::exp(-epsilon * c_rmt(beta, t)); }

// --- tabulated curves ---------------------------------------------------------------

struct RmtCurve {
    std::vector<double> t;
    std::vector<double> f;
    std::vector<double> stderr_;     ///< zero for closed forms
    std::vector<double> im_f;        ///< Monte Carlo only
    std::vector<double> im_stderr;   ///< Monte Carlo only
    double epsilon = 0.0;
    int beta = 2;
    std::string method;              ///< exact | lr | elr | mc
    std::string late_branch;         ///< exact only
};

inline std::vector<double> uniform_grid(double t_max, double dt) {
    if (!(dt > 0.0) || t_max < 0.0) throw std::invalid_argument("uniform_grid: need dt > 0, t_max >= 0");
    const auto n = static_cast<std::size_t>(std::floor(t_max / dt + 1e-9));
    std::vector<double> g(n + 1);
    for (std::size_t i = 0; i <= n; ++i) g[i] = static_cast<double>(i) * dt;
    return g;
}

inline RmtCurve closed_form_curve(const std::string& method, int beta, double epsilon, const std::vector<double>& t,
                                  LateBranch branch = kDefaultLateBranch) {
    RmtCurve c;
    c.t = t;
    c.epsilon = epsilon;
    c.beta = beta;
    c.method = method;
    c.f.reserve(t.size());
    for (double x : t) {
        if (method == "exact") {
            if (beta != 2) throw std::invalid_argument("closed-form exact curve exists only for beta = 2");
            c.f.push_back(gue_exact_fidelity(epsilon, x, branch));
        } else if (method == "lr") {
            c.f.push_back(lr_fidelity(epsilon, beta, x));
        } else if (method == "elr") {
            c.f.push_back(elr_fidelity(epsilon, beta, x));
        } else {
            throw std::invalid_argument("unknown method '" + method + "' (exact, lr, elr)");
        }
    }
    if (method == "exact") c.late_branch = to_string(branch);
    c.stderr_.assign(t.size(), 0.0);
    return c;
}

// --- Monte Carlo ensemble oracle ------------------------------------------------------

namespace detail {

/// Cumulative semicircle on [-1, 1].
inline double semicircle_cdf(double x) {
    x = std::clamp(x, -1.0, 1.0);
    return 0.5 + (x * std::sqrt(1.0 - x * x) + std::asin(x)) / std::numbers::pi;
}

/// Row-major packed Gaussian ensemble member of the class, lower triangle filled,
/// column-major storage (n x n).
inline std::vector<std::complex<double>> sample_gue(int n, RandomStream& rng) {
    std::vector<std::complex<double>> h(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        h[static_cast<std::size_t>(j) * n + j] = rng.normal();
        for (int i = j + 1; i < n; ++i) h[static_cast<std::size_t>(j) * n + i] = rng.complex_normal(1.0);
    }
    return h;
}

inline std::vector<double> sample_goe(int n, RandomStream& rng) {
    std::vector<double> h(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        h[static_cast<std::size_t>(j) * n + j] = std::sqrt(2.0) * rng.normal();
        for (int i = j + 1; i < n; ++i) h[static_cast<std::size_t>(j) * n + i] = rng.normal();
    }
    return h;
}

/// Eigenvalues (ascending) of a Hermitian/symmetric matrix given by its lower
/// triangle; eigenvectors overwrite the matrix when requested.
inline std::vector<double> eigh(int beta, int n, std::vector<std::complex<double>>& hc, std::vector<double>& hr,
                                bool vectors) {
    std::vector<double> w(static_cast<std::size_t>(n));
    const char jobz = vectors ? 'V' : 'N';
    lapack_int info = 0;
    if (beta == 2)
        info = LAPACKE_zheevd(LAPACK_COL_MAJOR, jobz, 'L', n, reinterpret_cast<lapack_complex_double*>(hc.data()), n,
                              w.data());
    else
        info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, jobz, 'L', n, hr.data(), n, w.data());
    if (info != 0) throw NumericError("Hermitian eigensolver failed with info = " + std::to_string(info));
    return w;
}

} // namespace detail

/// Unfolded spectrum of one H_0 draw: E -> N F_sc(E / 2 sqrt N), with the
/// class-independent semicircle radius 2 sqrt(N) for off-diagonal variance 1.
inline std::vector<double> sample_unfolded_spectrum(int beta, int n, RandomStream& rng) {
    std::vector<std::complex<double>> hc;
    std::vector<double> hr;
    if (beta == 2)
        hc = detail::sample_gue(n, rng);
    else
        hr = detail::sample_goe(n, rng);
    auto e = detail::eigh(beta, n, hc, hr, false);
    const double radius = 2.0 * std::sqrt(static_cast<double>(n));
    for (auto& x : e) x = static_cast<double>(n) * detail::semicircle_cdf(x / radius);
    return e;
}

/// Levels n with N/4 <= n < 3N/4: the bulk half used for the trace.
inline std::pair<int, int> central_half(int n) { return {n / 4, n - n / 4}; }

struct McOptions {
    int n = 200;
    int realizations = 500;
    std::uint64_t seed = 0;
};

/// f(t) = |C|^{-1} sum_{n in C} <n| exp(2 pi i H_eps t) exp(-2 pi i H_0 t) |n>,
/// C the central half of the H_0 levels, averaged over realizations.
inline RmtCurve mc_ensemble_fidelity(int beta, double epsilon, const std::vector<double>& t, const McOptions& opt) {
    if (beta != 1 && beta != 2) throw std::invalid_argument("mc_ensemble_fidelity: beta must be 1 or 2");
    if (epsilon < 0.0) throw std::invalid_argument("mc_ensemble_fidelity: epsilon must be >= 0");
    if (opt.n < 4 || opt.realizations < 2) throw std::invalid_argument("mc_ensemble_fidelity: need N >= 4 and >= 2 realizations");
    const int n = opt.n;
    const auto nt = t.size();
    const auto [lo, hi] = central_half(n);
    const double lambda = std::sqrt(epsilon) / (2.0 * std::numbers::pi);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    std::vector<std::vector<std::complex<double>>> rows(static_cast<std::size_t>(opt.realizations));

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (int r = 0; r < opt.realizations; ++r) {
        auto rng_h0 = RandomStream::derive(opt.seed, static_cast<std::uint64_t>(r), StreamPurpose::rmt_h0);
        auto rng_v = RandomStream::derive(opt.seed, static_cast<std::uint64_t>(r), StreamPurpose::rmt_v);
        const auto e0 = sample_unfolded_spectrum(beta, n, rng_h0);
        std::vector<std::complex<double>> hc;
        std::vector<double> hr;
        if (beta == 2) {
            hc = detail::sample_gue(n, rng_v);
            for (auto& x : hc) x *= lambda;
            for (int i = 0; i < n; ++i) hc[static_cast<std::size_t>(i) * n + i] += e0[static_cast<std::size_t>(i)];
        } else {
            hr = detail::sample_goe(n, rng_v);
            for (auto& x : hr) x *= lambda;
            for (int i = 0; i < n; ++i) hr[static_cast<std::size_t>(i) * n + i] += e0[static_cast<std::size_t>(i)];
        }
        const auto lam = detail::eigh(beta, n, hc, hr, true);
        // weights |W_{n m}|^2 for n in C
        std::vector<double> w(static_cast<std::size_t>(hi - lo) * n);
        for (int m = 0; m < n; ++m)
            for (int i = lo; i < hi; ++i) {
                const std::size_t src = static_cast<std::size_t>(m) * n + i;
                w[static_cast<std::size_t>(i - lo) * n + m] = beta == 2 ? std::norm(hc[src]) : hr[src] * hr[src];
            }
        auto& row = rows[static_cast<std::size_t>(r)];
        row.resize(nt);
        std::vector<std::complex<double>> z(static_cast<std::size_t>(n));
        for (std::size_t k = 0; k < nt; ++k) {
            for (int m = 0; m < n; ++m) z[static_cast<std::size_t>(m)] = std::polar(1.0, two_pi * lam[static_cast<std::size_t>(m)] * t[k]);
            std::complex<double> acc{};
            for (int i = lo; i < hi; ++i) {
                const double* wi = &w[static_cast<std::size_t>(i - lo) * n];
                double re = 0.0, im = 0.0;
                for (int m = 0; m < n; ++m) {
                    re += wi[m] * z[static_cast<std::size_t>(m)].real();
                    im += wi[m] * z[static_cast<std::size_t>(m)].imag();
                }
                acc += std::polar(1.0, -two_pi * e0[static_cast<std::size_t>(i)] * t[k]) * std::complex<double>{re, im};
            }
            row[k] = acc / static_cast<double>(hi - lo);
        }
    }

    RmtCurve c;
    c.t = t;
    c.epsilon = epsilon;
    c.beta = beta;
    c.method = "mc";
    c.f.resize(nt);
    c.stderr_.resize(nt);
    c.im_f.resize(nt);
    c.im_stderr.resize(nt);
    const double nr = opt.realizations;
    for (std::size_t k = 0; k < nt; ++k) {
        double sr = 0.0, si = 0.0;
        for (const auto& row : rows) {
            sr += row[k].real();
            si += row[k].imag();
        }
        const double mr = sr / nr, mi = si / nr;
        double vr = 0.0, vi = 0.0;
        for (const auto& row : rows) {
            vr += (row[k].real() - mr) * (row[k].real() - mr);
            vi += (row[k].imag() - mi) * (row[k].imag() - mi);
        }
        c.f[k] = mr;
        c.im_f[k] = mi;
        c.stderr_[k] = std::sqrt(vr / (nr - 1.0) / nr);
        c.im_stderr[k] = std::sqrt(vi / (nr - 1.0) / nr);
    }
    return c;
}

/// Per-point comparison of a closed-form curve with a Monte Carlo curve.
struct McValidation {
    std::vector<double> z;      ///< (f_ref - f_mc) / stderr_mc
    double max_abs_z = 0.0;
    double chi2_per_point = 0.0;
    std::size_t points = 0;
};

inline McValidation validate_against_mc(const RmtCurve& reference, const RmtCurve& mc, double t_lo = 0.0,
                                        double t_hi = 1e300) {
    if (reference.t.size() != mc.t.size()) throw std::invalid_argument("validate_against_mc: grids differ");
    McValidation v;
    double chi2 = 0.0;
    for (std::size_t k = 0; k < mc.t.size(); ++k) {
        if (std::abs(reference.t[k] - mc.t[k]) > 1e-12) throw std::invalid_argument("validate_against_mc: grids differ");
        if (mc.t[k] < t_lo || mc.t[k] > t_hi) continue;
        const double d = reference.f[k] - mc.f[k];
        // stderr vanishes at t = 0 where both curves equal 1 exactly
        const double z = mc.stderr_[k] > 0.0 ? d / mc.stderr_[k] : (std::abs(d) < 1e-12 ? 0.0 : 1e300);
        v.z.push_back(z);
        v.max_abs_z = std::max(v.max_abs_z, std::abs(z));
        chi2 += z * z;
        ++v.points;
    }
    v.chi2_per_point = v.points ? chi2 / static_cast<double>(v.points) : 0.0;
    return v;
}

} // namespace echochain

#pragma once

// Multiply kicked Ising (MKI) Floquet propagator, its x-kick perturbation,
// echo (fidelity amplitude) time series by stochastic trace estimation, the
// dynamical correlation function of A = sum_j sigma^x_j, and the conversion
// between the kick angle delta and the random-matrix strength epsilon.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "echochain/parallel.hpp"
#include "echochain/rng.hpp"
#include "echochain/statevec.hpp"

namespace echochain {

enum class SymmetryClassLabel { tri, non_tri };

inline std::string to_string(SymmetryClassLabel c) { return c == SymmetryClassLabel::tri ? "tri" : "non_tri"; }

/// One Floquet period: for n = 1..M, the Ising phase followed by kick n.
struct FloquetSpec {
    QubitCount L;
    ChainCoupling J{};
    std::vector<KickField> kicks;

    FloquetSpec(QubitCount l, ChainCoupling j, std::vector<KickField> k) : L(l), J(j), kicks(std::move(k)) {
        if (kicks.empty()) throw std::invalid_argument("FloquetSpec needs at least one kick");
    }
};

/// The two parameter sets used for the chaotic chains. The TRI preset has a
/// single kick in the xz-plane (h_perp = h_par = 1.4); the non-TRI preset adds
/// a second, non-coplanar kick.
inline FloquetSpec tri_preset(QubitCount l) { return {l, ChainCoupling{1.0}, {KickField{1.4, 0.0, 1.4}}}; }
inline FloquetSpec non_tri_preset(QubitCount l) {
    return {l, ChainCoupling{1.0}, {KickField{1.4, 1.4, 0.0}, KickField{1.0, 0.0, 1.0}}};
}

// --- propagation ------------------------------------------------------------

inline void mki_step_inplace(StateVector& s, const FloquetSpec& spec) {
    for (const KickField& b : spec.kicks) {
        apply_ising_phase_inplace(s, spec.J);
        apply_uniform_kick_inplace(s, b);
    }
}

inline StateVector mki_step(StateVector s, const FloquetSpec& spec) {
    mki_step_inplace(s, spec);
    return s;
}

/// U_MKI followed by exp(-i delta A).
inline void mki_perturbed_step_inplace(StateVector& s, const FloquetSpec& spec, double delta) {
    mki_step_inplace(s, spec);
    apply_x_rotation_all_inplace(s, delta);
}

inline StateVector mki_perturbed_step(StateVector s, const FloquetSpec& spec, double delta) {
    mki_perturbed_step_inplace(s, spec, delta);
    return s;
}

/// Recorded steps 0, stride, 2*stride, ... <= t_max.
inline std::vector<int> sample_times(int t_max, int stride) {
    if (t_max < 0) throw std::invalid_argument("t_max must be >= 0");
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    std::vector<int> ts;
    for (int t = 0; t <= t_max; t += stride) ts.push_back(t);
    return ts;
}

/// f_psi(t) = <psi| U0^dagger(t) U_delta(t) |psi> for the recorded steps.
/// Both trajectories are advanced in lock-step; memory is two state vectors.
inline std::vector<complex_t> fidelity_series(const FloquetSpec& spec, double delta, const StateVector& psi0,
                                              int t_max, int stride = 1) {
    const auto times = sample_times(t_max, stride);
    std::vector<complex_t> out;
    out.reserve(times.size());
    StateVector phi = psi0;
    StateVector chi = psi0;
    std::size_t next = 0;
    for (int t = 0; t <= t_max; ++t) {
        if (next < times.size() && times[next] == t) {
            out.push_back(inner_product(phi, chi));
            ++next;
        }
        if (t == t_max) break;
        mki_step_inplace(phi, spec);
        mki_perturbed_step_inplace(chi, spec, delta);
    }
    return out;
}

// --- trace estimation -------------------------------------------------------

/// How (1/N) Tr X is sampled.
struct ProbeEnsemble {
    enum class Kind { gaussian, basis_sweep };
    Kind kind = Kind::gaussian;
    int m = 1;                 ///< number of Gaussian states (ignored for basis_sweep)
    std::uint64_t seed = 0;

    static ProbeEnsemble gaussian(int m, std::uint64_t seed) { return {Kind::gaussian, m, seed}; }
    static ProbeEnsemble basis() { return {Kind::basis_sweep, 0, 0}; }

    [[nodiscard]] int count(QubitCount l) const {
        return kind == Kind::basis_sweep ? static_cast<int>(l.dimension()) : m;
    }

    /// Probe j. Basis probes are unit vectors; averaging <j|X|j> over all of them gives Tr X / N.
    [[nodiscard]] StateVector make(QubitCount l, int j, StreamPurpose purpose) const {
        if (kind == Kind::basis_sweep) return basis_state(l, static_cast<std::size_t>(j));
        auto rng = RandomStream::derive(seed, static_cast<std::uint64_t>(j), purpose);
        return random_gaussian_state(l, rng);
    }
};

struct FidelitySeries {
    std::vector<int> t_steps;
    std::vector<complex_t> f;          ///< mean over probes
    std::vector<double> scatter;       ///< per-step std of |f_psi - f| across probes
    std::vector<std::vector<complex_t>> samples;  ///< samples[j][k]: probe j at t_steps[k]
    int m = 0;
    double t_heis = 0.0;
    SymmetryClassLabel cls = SymmetryClassLabel::non_tri;
    double delta = 0.0;
};

inline double heisenberg_time(QubitCount l, bool tri) {
    const double n = std::ldexp(1.0, tri ? l.value() - 1 : l.value());
    return n / l.value();
}

/// (1/m) sum_j f_{psi_j}(t). Probes run in parallel; aggregation is in probe order.
inline FidelitySeries trace_fidelity(const FloquetSpec& spec, double delta, const ProbeEnsemble& probes, int t_max,
                                     int stride = 1, SymmetryClassLabel cls = SymmetryClassLabel::non_tri) {
    const int m = probes.count(spec.L);
    if (m < 1) throw std::invalid_argument("trace_fidelity needs m >= 1");
    FidelitySeries out;
    out.t_steps = sample_times(t_max, stride);
    out.m = m;
    out.cls = cls;
    out.delta = delta;
    out.t_heis = heisenberg_time(spec.L, cls == SymmetryClassLabel::tri);
    out.samples.assign(static_cast<std::size_t>(m), {});
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) if (m > 1)
#endif
    for (int j = 0; j < m; ++j) {
        const StateVector psi = probes.make(spec.L, j, StreamPurpose::initial_state);
        out.samples[static_cast<std::size_t>(j)] = fidelity_series(spec, delta, psi, t_max, stride);
    }
    const std::size_t nt = out.t_steps.size();
    out.f.assign(nt, complex_t{});
    out.scatter.assign(nt, 0.0);
    for (std::size_t k = 0; k < nt; ++k) {
        complex_t acc{};
        for (const auto& row : out.samples) acc += row[k];
        const complex_t mean = acc / static_cast<double>(m);
        double ss = 0.0;
        for (const auto& row : out.samples) ss += std::norm(row[k] - mean);
        out.f[k] = mean;
        out.scatter[k] = m > 1 ? std::sqrt(ss / (m - 1)) : 0.0;
    }
    return out;
}

// --- dynamical correlation function ----------------------------------------

/// C(t) = 2^-L Tr[A U^dagger(t) A U(t)] for t = 0..T.
struct CorrelationSeries {
    std::vector<double> c;
    std::vector<double> stderr_;  ///< standard error of the probe mean (0 for exact sweeps)
    int L = 0;
    int m = 0;

    [[nodiscard]] int t_max() const { return static_cast<int>(c.size()) - 1; }
    /// C(-t) = C(t).
    [[nodiscard]] double at(int t) const { return c.at(static_cast<std::size_t>(t < 0 ? -t : t)); }
};

/// Estimates C(t) by evolving |psi> and A|psi> forward and sandwiching A.
/// C(0) = L is fixed analytically (Tr A^2 = L 2^L).
inline CorrelationSeries correlation_series(const FloquetSpec& spec, int t_max, const ProbeEnsemble& probes) {
    if (t_max < 0) throw std::invalid_argument("correlation_series: t_max must be >= 0");
    const int m = probes.count(spec.L);
    if (m < 1) throw std::invalid_argument("correlation_series needs m >= 1");
    const auto nt = static_cast<std::size_t>(t_max) + 1;
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(m));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) if (m > 1)
#endif
    for (int j = 0; j < m; ++j) {
        StateVector phi = probes.make(spec.L, j, StreamPurpose::correlation);
        StateVector chi = apply_total_sigma_x(phi);
        auto& row = rows[static_cast<std::size_t>(j)];
        row.resize(nt);
        for (std::size_t t = 0; t < nt; ++t) {
            row[t] = inner_product(chi, apply_total_sigma_x(phi)).real();
            if (t + 1 < nt) {
                mki_step_inplace(phi, spec);
                mki_step_inplace(chi, spec);
            }
        }
    }
    CorrelationSeries out;
    out.L = spec.L.value();
    out.m = m;
    out.c.assign(nt, 0.0);
    out.stderr_.assign(nt, 0.0);
    const bool sweep = probes.kind == ProbeEnsemble::Kind::basis_sweep;
    for (std::size_t t = 0; t < nt; ++t) {
        double s = 0.0;
        for (const auto& r : rows) s += r[t];
        // basis sweep: (1/N) sum_j <j|X|j> is the exact normalized trace
        const double mean = s / m;
        double ss = 0.0;
        for (const auto& r : rows) ss += (r[t] - mean) * (r[t] - mean);
        out.c[t] = mean;
        out.stderr_[t] = (!sweep && m > 1) ? std::sqrt(ss / (m - 1) / m) : 0.0;
    }
    out.c[0] = static_cast<double>(out.L);
    out.stderr_[0] = 0.0;
    return out;
}

struct IntegratedCorrelation {
    double sigma = 0.0;                 ///< C(0)/2 + sum_{t=1}^{cutoff} C(t)
    std::vector<double> running;        ///< running[t] = C(0)/2 + sum_{t'=1}^{t} C(t')
    double tail_mean = 0.0;             ///< mean C(t) over (cutoff/2, cutoff]
    double tail_drift = 0.0;            ///< running[cutoff] - running[cutoff/2]
    bool non_convergent = false;
};

/// sigma = (1/2) sum_{t'=-cutoff}^{cutoff} C(t'). Flags a tail whose running
/// sum still moves by more than 10% of |sigma| (and 3 standard errors) over
/// the second half of the window.
inline IntegratedCorrelation integrated_correlation(const CorrelationSeries& c, int cutoff) {
    if (cutoff < 0 || cutoff > c.t_max())
        throw std::invalid_argument("integrated_correlation: cutoff must lie in [0, T]");
    IntegratedCorrelation r;
    r.running.resize(static_cast<std::size_t>(cutoff) + 1);
    double acc = 0.5 * c.c[0];
    r.running[0] = acc;
    for (int t = 1; t <= cutoff; ++t) {
        acc += c.c[static_cast<std::size_t>(t)];
        r.running[static_cast<std::size_t>(t)] = acc;
    }
    r.sigma = acc;
    const int half = cutoff / 2;
    if (cutoff >= 2) {
        double tail = 0.0;
        double var = 0.0;
        for (int t = half + 1; t <= cutoff; ++t) {
            tail += c.c[static_cast<std::size_t>(t)];
            if (!c.stderr_.empty()) var += c.stderr_[static_cast<std::size_t>(t)] * c.stderr_[static_cast<std::size_t>(t)];
        }
        r.tail_mean = tail / (cutoff - half);
        r.tail_drift = r.running[static_cast<std::size_t>(cutoff)] - r.running[static_cast<std::size_t>(half)];
        const double noise = 3.0 * std::sqrt(var);
        r.non_convergent = std::abs(r.tail_drift) > std::max(0.1 * std::abs(r.sigma), noise);
    }
    return r;
}

// --- perturbation-strength calibration -------------------------------------

/// epsilon = 2^L delta^2 sigma
inline double epsilon_from_delta(QubitCount l, double delta, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
    return std::ldexp(1.0, l.value()) * delta * delta * sigma;
}

inline double delta_from_epsilon(QubitCount l, double epsilon, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
    if (epsilon < 0.0) throw std::invalid_argument("epsilon must be >= 0");
    return std::sqrt(epsilon / (std::ldexp(1.0, l.value()) * sigma));
}

/// Shape of the approach of C(t) to its finite-size plateau: C(t) - C_short(t)
/// ~ C_inf * ramp(t / t_H), with ramp = 1 - b_2 (the form factor of the class).
inline double correlation_ramp(bool tri, double tau) {
    tau = std::abs(tau);
    if (!tri) return std::min(tau, 1.0);
    if (tau <= 1.0) return 2.0 * tau - tau * std::log1p(2.0 * tau);
    return 2.0 - tau * std::log((2.0 * tau + 1.0) / (2.0 * tau - 1.0));
}

/// Result of calibrating sigma from a measured correlation function.
///
/// At finite L the correlation function does not decay to zero but to a
/// plateau C_inf = (1/N) sum_n |A_nn|^2 of order L^2/2^L. How it gets there
/// depends on the class:
///  - non-TRI: C(t) ramps up as C_inf * ramp(t/t_H). The random-matrix
///    correlation already contains that ramp, so C_inf is fitted to the tail
///    (cutoff/2, cutoff] against the ramp shape and the fitted ramp is
///    subtracted. A constant tail mean would count the early ramp as plateau.
///  - TRI: most of the plateau is reached within a few tens of steps, far
///    ahead of the ramp, so the tail mean is subtracted as a constant.
/// The subtracted sum runs over [0, cutoff/2].
///
/// `sigma` is then expressed in the units that make epsilon = 2^L delta^2 sigma
/// agree with the golden-rule decay rate of the random-matrix model for the
/// chosen Heisenberg time: sigma = (2 t_H / 2^L) * sigma_corrected.
struct Calibration {
    IntegratedCorrelation raw;
    double plateau = 0.0;        ///< tail mean of C(t) over (cutoff/2, cutoff]
    double ramp_plateau = 0.0;   ///< C_inf fitted to the tail against the tail shape
    double sigma_corrected = 0.0;
    double sigma = 0.0;
    double t_heis = 0.0;
    bool non_decaying = false;   ///< plateau comparable to C(0): dynamics does not mix
};

inline Calibration calibrate_sigma(const CorrelationSeries& c, int cutoff, bool tri) {
    Calibration cal;
    cal.raw = integrated_correlation(c, cutoff);
    cal.plateau = cal.raw.tail_mean;
    const QubitCount l(c.L);
    cal.t_heis = heisenberg_time(l, tri);
    const auto ramp = [&](int t) { return tri ? 1.0 : correlation_ramp(false, t / cal.t_heis); };
    const int half = cutoff / 2;
    double cg = 0.0, gg = 0.0;
    for (int t = half + 1; t <= cutoff; ++t) {
        cg += c.c[static_cast<std::size_t>(t)] * ramp(t);
        gg += ramp(t) * ramp(t);
    }
    cal.ramp_plateau = gg > 0.0 ? cg / gg : 0.0;
    double acc = 0.5 * (c.c[0] - cal.ramp_plateau * ramp(0));
    for (int t = 1; t <= half; ++t) acc += c.c[static_cast<std::size_t>(t)] - cal.ramp_plateau * ramp(t);
    cal.sigma_corrected = acc;
    cal.sigma = 2.0 * cal.t_heis / std::ldexp(1.0, c.L) * cal.sigma_corrected;
    cal.non_decaying = std::abs(cal.plateau) > 0.1 * std::abs(c.c[0]);
    return cal;
}

/// Linear response of the chain: 1 - f(t) = (delta^2/2) sum_{s,s'=0}^{t-1} C(s - s')
///                                        = (delta^2/2) sum_{t'=-t+1}^{t-1} (t - |t'|) C(t').
inline std::vector<double> dynamical_linear_response(const CorrelationSeries& c, double delta, int t_max) {
    if (t_max < 0) throw std::invalid_argument("dynamical_linear_response: t_max must be >= 0");
    if (t_max - 1 > c.t_max()) throw std::invalid_argument("correlation series too short for requested T");
    std::vector<double> f(static_cast<std::size_t>(t_max) + 1);
    // S(t) = sum_{|t'|<t} (t - |t'|) C(t'); S(t+1) - S(t) = sum_{|t'|<=t} C(t')
    double s = 0.0;
    double window = 0.0;
    for (int t = 0; t <= t_max; ++t) {
        f[static_cast<std::size_t>(t)] = 1.0 - 0.5 * delta * delta * s;
        if (t == t_max) break;
        window += (t == 0) ? c.at(0) : 2.0 * c.at(t);
        s += window;
    }
    return f;
}

} // namespace echochain

#pragma once

// Error budget of a trace-estimated fidelity amplitude. The deviation of the
// m-state average from the ensemble value has two independent sources,
//     sigma_total^2 = sigma_intrinsic^2 + sigma_fa^2 / m,
// the intrinsic fluctuation of one chain about the ensemble curve and the
// finite average over m random states.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "echochain/floquet.hpp"

namespace echochain {

/// Mean over samples t_steps[k] > cutoff of the across-state std of the
/// per-state amplitudes (modulus of complex deviations, m - 1 normalization).
inline double finite_average_sigma(const std::vector<std::vector<complex_t>>& samples, const std::vector<int>& t_steps,
                                   int cutoff) {
    const std::size_t m = samples.size();
    if (m < 2) throw std::invalid_argument("finite_average_sigma needs at least 2 states");
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < t_steps.size(); ++k) {
        if (t_steps[k] <= cutoff) continue;
        complex_t mean{};
        for (const auto& row : samples) mean += row.at(k);
        mean /= static_cast<double>(m);
        double ss = 0.0;
        for (const auto& row : samples) ss += std::norm(row[k] - mean);
        acc += std::sqrt(ss / static_cast<double>(m - 1));
        ++used;
    }
    if (used == 0) throw std::invalid_argument("finite_average_sigma: no samples beyond the cutoff");
    return acc / static_cast<double>(used);
}

/// RMS of Im f over samples beyond the cutoff. The ensemble amplitude is real,
/// so Im f measures the deviation of one component about its known mean 0.
inline double total_sigma_from_imaginary(const std::vector<complex_t>& f, const std::vector<int>& t_steps, int cutoff) {
    double ss = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < t_steps.size(); ++k) {
        if (t_steps[k] <= cutoff) continue;
        ss += f[k].imag() * f[k].imag();
        ++used;
    }
    if (used == 0) throw std::invalid_argument("total_sigma_from_imaginary: no samples beyond the cutoff");
    return std::sqrt(ss / static_cast<double>(used));
}

inline double total_sigma_from_imaginary(const FidelitySeries& s, int cutoff) {
    return total_sigma_from_imaginary(s.f, s.t_steps, cutoff);
}

struct IntrinsicSigma {
    double value = 0.0;
    bool clipped = false;  ///< sampling noise made the discriminant negative
};

/// sqrt(sigma_total^2 - sigma_fa^2 / m), clipped at 0.
inline IntrinsicSigma intrinsic_sigma(double sigma_total, double sigma_fa, int m) {
    if (sigma_total < 0.0 || sigma_fa < 0.0 || m < 1) throw std::invalid_argument("intrinsic_sigma: bad inputs");
    const double d = sigma_total * sigma_total - sigma_fa * sigma_fa / m;
    if (d < 0.0) return {0.0, true};
    return {std::sqrt(d), false};
}

/// First sample index at which the scatter reaches `fraction` of its median
/// over the second half of the series: the end of the transient.
inline std::size_t detect_plateau(const std::vector<double>& scatter, double fraction = 0.9) {
    if (scatter.empty()) throw std::invalid_argument("detect_plateau: empty series");
    std::vector<double> tail(scatter.begin() + static_cast<std::ptrdiff_t>(scatter.size() / 2), scatter.end());
    std::nth_element(tail.begin(), tail.begin() + static_cast<std::ptrdiff_t>(tail.size() / 2), tail.end());
    const double level = fraction * tail[tail.size() / 2];
    for (std::size_t k = 0; k < scatter.size(); ++k)
        if (scatter[k] >= level) return k;
    return scatter.size() - 1;
}

struct ErrorBudget {
    double sigma_fa = 0.0;         ///< per state, complex modulus
    double sigma_total = 0.0;      ///< per component
    double sigma_intrinsic = 0.0;  ///< per component
    bool intrinsic_clipped = false;
    int m = 0;
    int transient_cutoff = 0;
};

/// Default transient cutoff: half a Heisenberg time.
inline int default_transient_cutoff(const FidelitySeries& s) { return static_cast<int>(std::floor(0.5 * s.t_heis)); }

/// sigma_fa is a two-component (modulus) scatter while sigma_total is taken
/// from Im f alone; for isotropic noise one component carries sigma_fa^2 / 2,
/// which is what enters the intrinsic subtraction.
inline ErrorBudget error_budget(const FidelitySeries& s, int cutoff) {
    ErrorBudget b;
    b.m = s.m;
    b.transient_cutoff = cutoff;
    b.sigma_total = total_sigma_from_imaginary(s, cutoff);
    if (s.m >= 2) {
        b.sigma_fa = finite_average_sigma(s.samples, s.t_steps, cutoff);
        const auto in = intrinsic_sigma(b.sigma_total, b.sigma_fa / std::sqrt(2.0), s.m);
        b.sigma_intrinsic = in.value;
        b.intrinsic_clipped = in.clipped;
    } else {
        b.sigma_intrinsic = b.sigma_total;
    }
    return b;
}

} // namespace echochain

#include <cmath>

#include <gtest/gtest.h>

#include "echochain/floquet.hpp"
#include "oracles.hpp"

using namespace echochain;

namespace {

StateVector random_state(int l, std::uint64_t index) {
    auto rng = RandomStream::derive(777, index, StreamPurpose::test);
    StateVector s = random_gaussian_state(QubitCount(l), rng);
    const double n = norm(s);
    for (auto& a : s.amplitudes()) a /= n;
    return s;
}

oracle::Mat matrix_power(const oracle::Mat& u, int t) {
    oracle::Mat r = oracle::Mat::Identity(u.rows(), u.cols());
    for (int i = 0; i < t; ++i) r = u * r;
    return r;
}

} // namespace

TEST(Floquet, RejectsEmptyKickList) {
    EXPECT_THROW(FloquetSpec(QubitCount(4), ChainCoupling{1.0}, {}), std::invalid_argument);
}

TEST(Floquet, TrivialSpecIsIdentity) {
    const FloquetSpec spec(QubitCount(5), ChainCoupling{0.0}, {KickField{}});
    const auto s = random_state(5, 1);
    EXPECT_LT(max_abs_diff(mki_step(s, spec), s), 1e-15);
}

TEST(Floquet, StepMatchesDenseOracleL3) {
    const FloquetSpec spec = non_tri_preset(QubitCount(3));
    const oracle::Mat u = oracle::floquet(3, 1.0, spec.kicks);
    for (int r = 0; r < 50; ++r) {
        const auto s = random_state(3, static_cast<std::uint64_t>(r));
        EXPECT_LT(oracle::max_diff(mki_step(s, spec), u * oracle::to_eigen(s)), 1e-13);
    }
}

TEST(Floquet, KickOrderWithinPeriod) {
    // the reversed order is a different operator; the kernel must match the forward one
    const std::vector<KickField> kicks{{1.4, 1.4, 0.0}, {1.0, 0.0, 1.0}};
    const std::vector<KickField> reversed{kicks[1], kicks[0]};
    const oracle::Mat fwd = oracle::floquet(3, 1.0, kicks);
    const oracle::Mat rev = oracle::floquet(3, 1.0, reversed);
    ASSERT_GT((fwd - rev).cwiseAbs().maxCoeff(), 1e-3);
    const FloquetSpec spec(QubitCount(3), ChainCoupling{1.0}, kicks);
    const auto s = random_state(3, 99);
    EXPECT_LT(oracle::max_diff(mki_step(s, spec), fwd * oracle::to_eigen(s)), 1e-13);
}

TEST(Floquet, PerturbedStepMatchesDenseOracle) {
    for (int l = 2; l <= 4; ++l) {
        const FloquetSpec spec = non_tri_preset(QubitCount(l));
        const oracle::Mat u = oracle::perturbed_floquet(l, 1.0, spec.kicks, 0.21);
        for (int r = 0; r < 20; ++r) {
            const auto s = random_state(l, static_cast<std::uint64_t>(100 + r));
            EXPECT_LT(oracle::max_diff(mki_perturbed_step(s, spec, 0.21), u * oracle::to_eigen(s)), 1e-13);
        }
    }
}

TEST(Fidelity, StartsAtOneAndIsNormWithoutPerturbation) {
    const FloquetSpec spec = tri_preset(QubitCount(6));
    const auto s = random_state(6, 5);
    const auto f = fidelity_series(spec, 0.0, s, 30);
    for (const auto& x : f) EXPECT_NEAR(std::abs(x - complex_t(1.0)), 0.0, 1e-12);
    const auto g = fidelity_series(spec, 0.3, s, 30);
    EXPECT_NEAR(std::abs(g[0] - complex_t(1.0)), 0.0, 1e-12);
}

TEST(Fidelity, StrideSamplesTheFullSeries) {
    const FloquetSpec spec = non_tri_preset(QubitCount(6));
    const auto s = random_state(6, 6);
    const auto full = fidelity_series(spec, 0.2, s, 20, 1);
    const auto strided = fidelity_series(spec, 0.2, s, 20, 5);
    ASSERT_EQ(strided.size(), 5U);
    for (std::size_t k = 0; k < strided.size(); ++k) EXPECT_EQ(strided[k], full[5 * k]);
}

TEST(Fidelity, BasisSweepEqualsDenseTrace) {
    const int l = 4;
    const FloquetSpec spec = non_tri_preset(QubitCount(l));
    const oracle::Mat u0 = oracle::floquet(l, 1.0, spec.kicks);
    const oracle::Mat ud = oracle::perturbed_floquet(l, 1.0, spec.kicks, 0.15);
    const auto series = trace_fidelity(spec, 0.15, ProbeEnsemble::basis(), 12);
    for (int t = 0; t <= 12; ++t) {
        const oracle::cd ref = (matrix_power(u0, t).adjoint() * matrix_power(ud, t)).trace() / 16.0;
        EXPECT_LT(std::abs(series.f[static_cast<std::size_t>(t)] - ref), 1e-12) << "t=" << t;
    }
}

TEST(Fidelity, ThreadCountDoesNotChangeResults) {
    const FloquetSpec spec = non_tri_preset(QubitCount(15));
    set_thread_count(1);
    const auto a = trace_fidelity(spec, 0.01, ProbeEnsemble::gaussian(2, 3), 4);
    set_thread_count(3);
    const auto b = trace_fidelity(spec, 0.01, ProbeEnsemble::gaussian(2, 3), 4);
    set_thread_count(1);
    for (std::size_t k = 0; k < a.f.size(); ++k) EXPECT_EQ(a.f[k], b.f[k]);
}

TEST(Fidelity, HalvingDeltaQuartersTheDecay) {
    const FloquetSpec spec = non_tri_preset(QubitCount(10));
    const auto probes = ProbeEnsemble::gaussian(2, 11);
    const auto a = trace_fidelity(spec, 1e-3, probes, 10);
    const auto b = trace_fidelity(spec, 5e-4, probes, 10);
    const double da = 1.0 - a.f[10].real() / a.f[0].real();
    const double db = 1.0 - b.f[10].real() / b.f[0].real();
    EXPECT_NEAR(da / db, 4.0, 0.2);
}

TEST(Correlation, BasisSweepEqualsDenseTrace) {
    const int l = 4;
    const FloquetSpec spec = tri_preset(QubitCount(l));
    const oracle::Mat u = oracle::floquet(l, 1.0, spec.kicks);
    const oracle::Mat a = oracle::total_sigma_x(l);
    const auto c = correlation_series(spec, 10, ProbeEnsemble::basis());
    EXPECT_EQ(c.c[0], 4.0);
    for (int t = 0; t <= 10; ++t) {
        const oracle::Mat ut = matrix_power(u, t);
        const double ref = (a * ut.adjoint() * a * ut).trace().real() / 16.0;
        EXPECT_NEAR(c.c[static_cast<std::size_t>(t)], ref, 1e-12) << "t=" << t;
    }
    EXPECT_EQ(c.at(-3), c.at(3));
}

TEST(Correlation, IntegratedSumOfVanishingCorrelation) {
    CorrelationSeries c;
    c.L = 6;
    c.c.assign(51, 0.0);
    c.c[0] = 6.0;
    c.stderr_.assign(51, 0.0);
    const auto r = integrated_correlation(c, 50);
    EXPECT_DOUBLE_EQ(r.sigma, 3.0);
    EXPECT_FALSE(r.non_convergent);
}

TEST(Correlation, FrozenDynamicsIsFlagged) {
    const FloquetSpec frozen(QubitCount(6), ChainCoupling{0.0}, {KickField{}});
    const auto c = correlation_series(frozen, 40, ProbeEnsemble::gaussian(4, 1));
    const auto r = integrated_correlation(c, 40);
    EXPECT_TRUE(r.non_convergent);
    EXPECT_TRUE(calibrate_sigma(c, 40, false).non_decaying);
}

TEST(Calibration, NonTriSubtractsFittedRampNotTailMean) {
    // short-time part sums to 2.5; the ramp C_inf * ramp(t/t_H) must not leak into sigma
    CorrelationSeries c;
    c.L = 10;
    const double th = heisenberg_time(QubitCount(10), false);
    const double cinf = 0.02;
    for (int t = 0; t <= 60; ++t) {
        const double shortpart = t == 0 ? 2.0 : (t <= 3 ? 0.5 : 0.0);
        c.c.push_back(shortpart + cinf * std::min(t / th, 1.0));
    }
    c.stderr_.assign(c.c.size(), 0.0);
    const auto cal = calibrate_sigma(c, 60, false);
    EXPECT_NEAR(cal.ramp_plateau, cinf, 1e-12);
    EXPECT_NEAR(cal.sigma_corrected, 1.0 + 1.5, 1e-12);
    EXPECT_NEAR(cal.sigma, 2.0 * th / 1024.0 * 2.5, 1e-12);
    EXPECT_FALSE(cal.non_decaying);
}

TEST(Calibration, TriSubtractsFlatPlateau) {
    CorrelationSeries c;
    c.L = 10;
    const double plateau = 0.03;
    for (int t = 0; t <= 60; ++t) c.c.push_back((t == 0 ? 2.0 : (t <= 3 ? 0.5 : 0.0)) + plateau);
    c.stderr_.assign(c.c.size(), 0.0);
    const auto cal = calibrate_sigma(c, 60, true);
    EXPECT_NEAR(cal.ramp_plateau, plateau, 1e-12);
    EXPECT_NEAR(cal.sigma_corrected, 2.5, 1e-12);
    EXPECT_NEAR(cal.sigma, heisenberg_time(QubitCount(10), true) / 512.0 * 2.5, 1e-12);
}

TEST(Calibration, EpsilonDeltaRoundTrip) {
    const QubitCount l(12);
    const double sigma = 0.87;
    const double d = delta_from_epsilon(l, 10.3, sigma);
    EXPECT_NEAR(epsilon_from_delta(l, d, sigma), 10.3, 1e-12);
    EXPECT_NEAR(std::ldexp(1.0, 12) * d * d * sigma, 10.3, 1e-12);
    EXPECT_THROW(delta_from_epsilon(l, 1.0, 0.0), std::invalid_argument);
    EXPECT_THROW(epsilon_from_delta(l, 0.1, -1.0), std::invalid_argument);
}

TEST(Calibration, HeisenbergTimes) {
    EXPECT_DOUBLE_EQ(heisenberg_time(QubitCount(8), false), 32.0);
    EXPECT_DOUBLE_EQ(heisenberg_time(QubitCount(8), true), 16.0);
}

TEST(LinearResponse, MatchesDirectDoubleSum) {
    CorrelationSeries c;
    c.L = 4;
    c.c = {4.0, 1.5, -0.3, 0.2, 0.1, 0.05, 0.0, 0.02};
    c.stderr_.assign(c.c.size(), 0.0);
    const double delta = 0.1;
    const auto f = dynamical_linear_response(c, delta, 7);
    for (int t = 0; t <= 7; ++t) {
        double s = 0.0;
        for (int a = 0; a < t; ++a)
            for (int b = 0; b < t; ++b) s += c.at(a - b);
        EXPECT_NEAR(f[static_cast<std::size_t>(t)], 1.0 - 0.5 * delta * delta * s, 1e-14);
    }
}

TEST(LinearResponse, AgreesWithExactEchoAtSmallDelta) {
    const int l = 8;
    const FloquetSpec spec = non_tri_preset(QubitCount(l));
    const double delta = 2e-3;
    const int t_max = 30;
    const auto c = correlation_series(spec, t_max, ProbeEnsemble::basis());
    const auto lr = dynamical_linear_response(c, delta, t_max);
    const auto f = trace_fidelity(spec, delta, ProbeEnsemble::basis(), t_max);
    for (int t = 0; t <= t_max; ++t) {
        // remainder is O(delta^4 t^2 L^2) in the real part
        const double bound = 10.0 * std::pow(delta, 4) * t * t * l * l + 1e-12;
        EXPECT_NEAR(f.f[static_cast<std::size_t>(t)].real(), lr[static_cast<std::size_t>(t)], bound) << "t=" << t;
    }
}

#pragma once

// Thin OpenMP wrappers. Every reduction goes through fixed-size blocks that
// are summed serially in block order, so results do not depend on the number
// of worker threads.

#include <algorithm>
#include <complex>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace echochain {

inline constexpr std::size_t kReductionBlock = 4096;

/// Number of workers requested through ECHOCHAIN_THREADS, or 0 when unset.
inline int threads_from_env() {
    const char* v = std::getenv("ECHOCHAIN_THREADS");
    if (v == nullptr) return 0;
    try {
        return std::max(0, std::stoi(v));
    } catch (...) {
        return 0;
    }
}

inline void set_thread_count(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

inline int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

template <class Fn>
void parallel_for(std::ptrdiff_t n, Fn&& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n >= 16384)
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
}

/// Sum of term(i) for i in [0, n) with thread-count independent rounding.
template <class T, class Fn>
T blocked_sum(std::size_t n, Fn&& term) {
    const std::size_t nblocks = (n + kReductionBlock - 1) / kReductionBlock;
    std::vector<T> partial(nblocks, T{});
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (nblocks > 1)
#endif
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(nblocks); ++b) {
        const std::size_t lo = static_cast<std::size_t>(b) * kReductionBlock;
        const std::size_t hi = std::min(n, lo + kReductionBlock);
        T acc{};
        for (std::size_t i = lo; i < hi; ++i) acc += term(i);
        partial[static_cast<std::size_t>(b)] = acc;
    }
    T total{};
    for (const T& p : partial) total += p;
    return total;
}

} // namespace echochain

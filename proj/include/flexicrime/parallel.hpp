#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flexicrime::par {

enum class Mode {
    serial, // reference implementation, single thread
    openmp, // OpenMP worker pool
};

// Process-global execution mode. Defaults to openmp when compiled with
// OpenMP support, serial otherwise.
Mode& mode();

int max_threads();

// Data-parallel loop over [0, n). The body must write only to slots owned by
// index i; reductions are done by the caller in index order afterwards, so
// results are bit-identical between the serial and OpenMP paths.
template <class F>
void parallel_for(std::size_t n, F&& f) {
#ifdef _OPENMP
    if (mode() == Mode::openmp && n > 1) {
#pragma omp parallel for schedule(dynamic, 1)
        for (long long i = 0; i < static_cast<long long>(n); ++i) {
            f(static_cast<std::size_t>(i));
        }
        return;
    }
#endif
    for (std::size_t i = 0; i < n; ++i) f(i);
}

} // namespace flexicrime::par

#include "flexicrime/parallel.hpp"

namespace flexicrime::par {

Mode& mode() {
#ifdef _OPENMP
    static Mode m = Mode::openmp;
#else
    static Mode m = Mode::serial;
#endif
    return m;
}

int max_threads() {
#ifdef _OPENMP
    return mode() == Mode::openmp ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

} // namespace flexicrime::par

#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pointcra {

// Worker thread cap shared by every kernel. 0 means library default.
// Initialised from the CRA_THREADS environment variable on first use.
void set_thread_cap(int n);
int thread_cap();

// Effective thread count for a loop of n independent iterations.
int threads_for(std::int64_t n);

// Every parallel loop in the project runs through here. Iterations own
// disjoint output elements and all floating point reductions stay inside a
// single iteration, so results are bit identical for any thread count.
template <class F>
void parallel_for(std::int64_t n, F&& body) {
#ifdef _OPENMP
    int t = threads_for(n);
    if (t > 1) {
#pragma omp parallel for schedule(static) num_threads(t)
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
#endif
    for (std::int64_t i = 0; i < n; ++i) body(i);
}

}  // namespace pointcra

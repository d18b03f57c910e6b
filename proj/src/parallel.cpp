#include "pointcra/parallel.hpp"

#include <atomic>
#include <cstdlib>

namespace pointcra {

namespace {

std::atomic<int> g_cap{-1};

int env_cap() {
    const char* s = std::getenv("CRA_THREADS");
    if (!s || !*s) return 0;
    int v = std::atoi(s);
    return v < 0 ? 0 : v;
}

}  // namespace

void set_thread_cap(int n) { g_cap.store(n < 0 ? 0 : n); }

int thread_cap() {
    int c = g_cap.load();
    if (c < 0) {
        c = env_cap();
        g_cap.store(c);
    }
    return c;
}

int threads_for(std::int64_t n) {
#ifdef _OPENMP
    if (n < 512) return 1;  // fork overhead dominates below this
    int t = omp_get_max_threads();
    int cap = thread_cap();
    if (cap > 0 && cap < t) t = cap;
    if (std::int64_t(t) > n) t = int(n);
    return t < 1 ? 1 : t;
#else
    (void)n;
    return 1;
#endif
}

}  // namespace pointcra

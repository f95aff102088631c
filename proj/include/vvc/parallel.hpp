#pragma once

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vvc {

inline int hardware_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// 0 means "use all available".
inline int resolve_threads(int requested) {
  return requested <= 0 ? hardware_threads() : requested;
}

// Runs fn(i) for i in [0, n). Every iteration must be independent and write
// only to its own slot so that the result is identical for any thread count.
template <typename F>
void parallel_for(std::int64_t n, int threads, F&& fn) {
  const int nt = resolve_threads(threads);
#ifdef _OPENMP
  if (nt > 1) {
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt)
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace vvc

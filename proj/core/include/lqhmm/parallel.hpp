#ifndef LQHMM_PARALLEL_HPP
#define LQHMM_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace lqhmm {

/// Thread count from the LQHMM_THREADS environment variable, falling back
/// to `fallback` (<= 0 means hardware concurrency).
int thread_count_from_env(int fallback = 0);

/// Runs fn(0..n-1) over a static partition of `threads` workers. Callers are
/// responsible for writing only to index-owned slots; combined with a serial
/// reduction afterwards this gives bit-identical results for any thread
/// count. The first exception thrown (lowest worker index) is rethrown.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace lqhmm

#endif

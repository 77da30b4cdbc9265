#pragma once
// Minimal persistent thread pool with an index-range parallel_for.
//
// Determinism contract: tasks must write only to locations owned by their
// index; any reduction must use fixed-size blocks merged in index order by
// the caller. Under that contract results are independent of the worker
// count (SSMLAB_THREADS overrides the default of hardware_concurrency).

#include <cstddef>
#include <functional>

namespace ssmlab::par {

// Number of workers (including the calling thread).
std::size_t thread_count();

// Invoke fn(begin, end) over a partition of [0, n). Ranges are contiguous
// and non-overlapping; fn may run concurrently. Small n executes inline.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t grain = 1);

}  // namespace ssmlab::par

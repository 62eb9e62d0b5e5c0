#pragma once

#include <cstddef>
#include <functional>

namespace hvc {

// Process-wide default worker count. 0 restores the hardware default.
void set_max_threads(int n);
int max_threads();

// Number of chunks parallel_for will actually use for n items.
int plan_threads(std::size_t n, int threads = 0);

// Runs body(begin, end, worker) over a static contiguous partition of
// [0, n). Worker 0 executes on the calling thread. Partitioning depends
// only on (n, thread count), so any reduction that merges per-worker
// partials in worker order is reproducible for a fixed thread count.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t, int)>& body,
                  int threads = 0);

}  // namespace hvc

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace hmer {

// Global worker count for parallel_for. 0 = hardware concurrency.
void set_thread_count(int n);
int thread_count();

// Statically partitioned parallel loop: worker w handles a fixed contiguous
// index range, so any per-worker accumulation is reproducible for a given
// thread count. fn(index, worker).
void parallel_for(std::size_t n, const std::function<void(std::size_t, int)>& fn);

}  // namespace hmer

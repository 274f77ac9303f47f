#pragma once

#include <cstddef>
#include <functional>

namespace swcalib {

// Worker count: SWCALIB_THREADS when set (>= 1), else hardware concurrency.
std::size_t worker_count();

// Runs fn(begin, end) over a static partition of [0, n). Each index is
// visited by exactly one worker and partitions never depend on timing, so
// callers that write disjoint outputs get results identical to a serial run.
// Work below min_chunk items per worker stays on the calling thread.
void parallel_for(std::size_t n, std::size_t min_chunk, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace swcalib

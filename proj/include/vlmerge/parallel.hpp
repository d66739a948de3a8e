#pragma once

#include <cstddef>
#include <functional>

namespace vlmerge {

// 0 means one worker per hardware thread.
unsigned resolve_jobs(unsigned jobs);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// thrown by any task is rethrown on the calling thread after all workers stop.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

}  // namespace vlmerge

#pragma once

#include <cstddef>
#include <functional>

#include "catmouse/real.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

/// Worker count from CATMOUSE_THREADS, defaulting to the hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, count) on up to worker_count() threads. Each index
/// runs exactly once; callers write results into slot i so the outcome never
/// depends on scheduling. The exception from the lowest failing index is
/// rethrown after all workers finish.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace catmouse::inline CATMOUSE_PRECISION

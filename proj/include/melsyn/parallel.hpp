#pragma once

#include <cstddef>
#include <functional>

namespace melsyn {

/// Worker count from MELSYN_THREADS, else hardware concurrency (at least 1).
unsigned worker_count();

/// Runs body(i) for i in [0, n) over up to worker_count() threads. Each index
/// runs exactly once; results must be written to per-index slots. The first
/// exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace melsyn

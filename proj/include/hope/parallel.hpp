#pragma once

#include <cstddef>
#include <functional>

namespace hope {

/// Worker count: HOPE_THREADS when set to a positive integer, else hardware concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) over a static partition of `threads` workers.
/// Callers write results by index, so output never depends on the worker count.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

} // namespace hope

#pragma once

#include <cstddef>
#include <functional>

namespace purekit {

// Worker count: PUREKIT_THREADS when set (>= 1), else the hardware concurrency.
std::size_t thread_count();

// Runs fn(i) for i in [0, n) on up to thread_count() threads. Callers must
// make fn(i) depend only on i, which keeps results schedule-independent. If
// any call throws, the exception from the smallest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace purekit

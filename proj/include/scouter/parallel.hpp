#pragma once

#include "scouter/tensor.hpp"

#include <functional>

namespace scouter {

/// Worker cap: SCOUTER_THREADS when set and positive, else hardware concurrency.
Index worker_count();

/// Calls fn(i) for i in [0, count) over up to `workers` threads. The first
/// exception thrown by any call is rethrown after all workers join.
void parallel_for(Index count, Index workers, const std::function<void(Index)>& fn);

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// kernel. Training allocates and frees the same large buffers every step,
/// and fresh pages cost a fault each. No-op outside glibc.
void retain_heap_memory();

}  // namespace scouter

#pragma once

#include <functional>

namespace evrecon {

// Number of worker threads to use. Honors the EVRECON_THREADS environment
// variable, otherwise falls back to the hardware concurrency.
int worker_thread_count();

// Runs fn(i) for i in [begin, end) over a static block partition of the
// worker threads. Callers are responsible for making iterations independent;
// results written to preallocated slots stay deterministic regardless of the
// thread count.
void parallel_for(int begin, int end, const std::function<void(int)>& fn);

}  // namespace evrecon

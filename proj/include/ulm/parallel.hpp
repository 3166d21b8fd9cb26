#pragma once

#include <cstddef>
#include <functional>

namespace ulm {

// Worker cap: ULM_THREADS if set and positive, else 1. The CLI --threads
// flag overrides via set_thread_limit.
int thread_limit();
void set_thread_limit(int n);

// Runs fn(i) for i in [0, n) on up to thread_limit() threads. Each index
// is processed exactly once; callers write results into per-index slots
// so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ulm

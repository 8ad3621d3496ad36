#pragma once

#include <cstdint>
#include <functional>

namespace dce {

// Worker count from DCE_THREADS (default: hardware concurrency), at least 1.
int worker_count();

// Override for tests; 0 restores the environment-derived value.
void set_worker_count(int workers);

// Runs body(i) for every i in [0, count). Each index is visited by exactly
// one worker, so callers that write disjoint outputs stay deterministic.
void parallel_for(int64_t count, const std::function<void(int64_t)>& body);

}  // namespace dce

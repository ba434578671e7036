#pragma once

#include <cstddef>
#include <functional>

namespace cflow {

inline constexpr const char* kThreadsEnv = "COALESCE_FLOW_THREADS";

// requested > 0 wins; otherwise the environment variable, otherwise the
// hardware concurrency (at least 1).
int resolve_threads(int requested = 0);

// Runs body(begin, end) over a static contiguous partition of [0, n).
// Work is split the same way for every run with the same thread count,
// and callers write results by index, so output never depends on scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace cflow

#pragma once

#include <cstddef>
#include <functional>
#include <optional>

namespace oqrf {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is claimed
/// dynamically; callers write results by index so output never depends on the
/// schedule. If any call throws, the exception from the lowest index is
/// rethrown after all workers join.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Thread count from an explicit flag, else $OQRF_THREADS, else 1.
int resolve_threads(std::optional<int> flag);

}  // namespace oqrf

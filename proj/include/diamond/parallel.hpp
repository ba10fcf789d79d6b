#pragma once

#include <cstddef>
#include <functional>

namespace diamond {

/// Worker cap: DIAMOND_BENCH_THREADS when set, hardware concurrency otherwise.
int max_threads();

/// Runs fn(i) for i in [0, n). Work items must be independent; results are
/// deterministic because each item owns its output slot and its own RNG
/// stream. Rethrows the first worker exception.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace diamond

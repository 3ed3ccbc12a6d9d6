#pragma once

#include <cstddef>
#include <functional>

namespace hiss {

/// Worker cap from HISS_SEQ_THREADS (default: hardware concurrency, at least 1).
std::size_t max_workers();

/// Runs fn(begin, end) over contiguous blocks of [0, n). Block boundaries
/// depend only on n and workers, never on scheduling.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace hiss

#pragma once

#include <cstddef>
#include <functional>

namespace voxelfuse {

// Worker cap: VOXELFUSE_THREADS if set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t thread_budget();

// Runs body(begin, end) over disjoint chunks of [0, n). Chunks write disjoint
// outputs, so results never depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 64);

}  // namespace voxelfuse

#pragma once

#include <cstddef>
#include <functional>

namespace cbfforge {

// Worker count from CBFFORGE_THREADS (default 1). Values < 1 fall back to 1.
int thread_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; fn must
// only write to locations owned by its index so results do not depend on the
// thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace cbfforge

#pragma once

#include <cstdint>
#include <functional>

namespace scanssc {

// Number of worker threads the library may use. Controlled by the
// SCANSSC_THREADS environment variable (>=1); defaults to the hardware
// concurrency.
int worker_count();

// Runs fn(i) for i in [0, n). Work items must be independent; each item
// may only write to its own output slot so results do not depend on the
// thread count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace scanssc

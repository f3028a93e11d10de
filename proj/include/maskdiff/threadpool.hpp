#pragma once

#include <cstdint>
#include <functional>

namespace maskdiff::mt {

// Kernel-level parallelism. parallel_for splits [0, n) into contiguous
// chunks, at most one per thread, so every output element is written by
// exactly one thread and results are bit-identical for any thread count.
// Calls nested inside a running parallel_for (or inside a SerialSection)
// execute inline.

int max_threads();
void set_max_threads(int n);

void parallel_for(int64_t n, int64_t grain,
                  const std::function<void(int64_t, int64_t)>& fn);

// Forces parallel_for onto this thread for the guard's lifetime. Used by the
// harness when it distributes whole evaluation cells across threads.
class SerialSection {
 public:
  SerialSection();
  ~SerialSection();
  SerialSection(const SerialSection&) = delete;
  SerialSection& operator=(const SerialSection&) = delete;
};

}  // namespace maskdiff::mt

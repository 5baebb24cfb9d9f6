#pragma once

#include <cstdint>
#include <functional>

namespace snpg {

// Worker count: SNPG_THREADS when set and positive, else hardware concurrency.
int thread_count();

// Runs fn(begin, end) over contiguous chunks of [0, n). Chunk boundaries
// depend only on n and num_chunks, never on the thread count, so per-chunk
// partial results reduced in chunk order are reproducible.
void parallel_chunks(int64_t n, int num_chunks,
                     const std::function<void(int chunk, int64_t begin, int64_t end)>& fn);

// Independent per-index work with no reduction.
void parallel_for(int64_t n, const std::function<void(int64_t begin, int64_t end)>& fn);

}  // namespace snpg

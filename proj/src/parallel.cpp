#include "snpg/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace snpg {

int thread_count() {
  static const int count = [] {
    if (const char* env = std::getenv("SNPG_THREADS")) {
      int v = std::atoi(env);
      if (v > 0) return v;
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }();
  return count;
}

void parallel_chunks(int64_t n, int num_chunks,
                     const std::function<void(int, int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  num_chunks = static_cast<int>(std::clamp<int64_t>(num_chunks, 1, n));
  auto bounds = [&](int c) { return n * c / num_chunks; };
  int workers = std::min(thread_count(), num_chunks);
  if (workers <= 1) {
    for (int c = 0; c < num_chunks; ++c) fn(c, bounds(c), bounds(c + 1));
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (int c = next++; c < num_chunks; c = next++) {
      try {
        fn(c, bounds(c), bounds(c + 1));
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  pool.clear();
  if (error) std::rethrow_exception(error);
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  int chunks = std::max(1, thread_count());
  parallel_chunks(n, chunks, [&](int, int64_t b, int64_t e) { fn(b, e); });
}

}  // namespace snpg

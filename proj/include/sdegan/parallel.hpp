#pragma once

// Deterministic task parallelism: work is split into fixed, index-addressed
// tasks whose outputs land in per-task slots, so results never depend on
// the number of worker threads.

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace sdegan {

inline int default_thread_count() {
  if (const char* env = std::getenv("SDEGAN_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(task, worker) for task in [0, n_tasks).  fn must write only to
// task-indexed state; `worker` in [0, n_threads) identifies the executing
// worker, for indexing into per-worker scratch (no two tasks run on the
// same worker id concurrently).
inline void parallel_for(int n_tasks, int n_threads,
                         const std::function<void(int, int)>& fn) {
  if (n_tasks <= 0) return;
  if (n_threads <= 1 || n_tasks == 1) {
    for (int t = 0; t < n_tasks; ++t) fn(t, 0);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&](int wid) {
    for (;;) {
      const int t = next.fetch_add(1, std::memory_order_relaxed);
      if (t >= n_tasks) return;
      fn(t, wid);
    }
  };
  const int workers = std::min(n_threads, n_tasks);
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int i = 1; i < workers; ++i) pool.emplace_back(worker, i);
  worker(0);
  for (auto& th : pool) th.join();
}

inline void parallel_for(int n_tasks, int n_threads,
                         const std::function<void(int)>& fn) {
  parallel_for(n_tasks, n_threads, [&](int t, int) { fn(t); });
}

}  // namespace sdegan

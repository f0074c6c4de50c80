// Deterministic parallel-for over an index range.
//
// Work item i always computes the same result regardless of the thread
// that runs it (randomness is addressed per index, results land in
// pre-sized slots), so parallel and serial execution agree exactly.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace synthpi {

inline int& max_threads() {
  static int n = static_cast<int>(std::thread::hardware_concurrency());
  return n;
}

namespace detail {
inline bool& in_worker() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

// fn(worker_id, i) is called once for every i in [0, n).  worker_id is
// stable within a worker and in [0, n_workers); use it to index
// per-thread workspaces.  Nested calls degrade to serial execution.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, int threads = 0) {
  if (threads <= 0) threads = max_threads();
  threads = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (threads == 1 || detail::in_worker()) {
    for (std::size_t i = 0; i < n; ++i) fn(0, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  const std::size_t chunk = std::max<std::size_t>(1, n / (8 * threads));
  auto work = [&](int worker_id) {
    detail::in_worker() = true;
    while (!failed.load(std::memory_order_relaxed)) {
      const std::size_t begin = next.fetch_add(chunk);
      if (begin >= n) break;
      const std::size_t end = std::min(n, begin + chunk);
      try {
        for (std::size_t i = begin; i < end; ++i) fn(worker_id, i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
        break;
      }
    }
    detail::in_worker() = false;
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads) - 1);
  for (int t = 1; t < threads; ++t) pool.emplace_back(work, t);
  work(0);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace synthpi

#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cme {

namespace detail {
inline int default_thread_count() {
  if (const char* env = std::getenv("CME_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

inline std::atomic<int>& thread_limit() {
  static std::atomic<int> limit{default_thread_count()};
  return limit;
}

inline thread_local bool inside_parallel_region = false;
}  // namespace detail

inline int max_threads() { return detail::thread_limit().load(); }
inline void set_max_threads(int n) { detail::thread_limit().store(n < 1 ? 1 : n); }

/// Runs fn(i) for i in [0, count). Each index must write only to its own
/// output slot; the work-stealing schedule is then invisible in the results.
/// Nested calls execute serially on the calling thread.
template <typename Fn>
void parallel_for(std::int64_t count, Fn&& fn) {
  if (count <= 0) return;
  const int threads = static_cast<int>(std::min<std::int64_t>(max_threads(), count));
  if (threads <= 1 || detail::inside_parallel_region) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    detail::inside_parallel_region = true;
    while (!failed.load(std::memory_order_relaxed)) {
      const std::int64_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
      }
    }
    detail::inside_parallel_region = false;
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace cme

#include "canonkit/threads.hpp"

#include <atomic>
#include <thread>
#include <vector>

#include "canonkit/error.hpp"

namespace canonkit {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) {
  CK_CHECK(n >= 1, ErrKind::config, "thread count must be at least 1");
  g_threads.store(n);
}

int get_num_threads() { return g_threads.load(); }

void parallel_for(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int workers = std::min(get_num_threads(), n);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  const int chunk = (n + workers - 1) / workers;
  std::exception_ptr err;
  std::atomic<bool> failed{false};
  for (int w = 0; w < workers; ++w) {
    const int lo = w * chunk;
    const int hi = std::min(n, lo + chunk);
    pool.emplace_back([&, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        if (!failed.exchange(true)) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed.load()) std::rethrow_exception(err);
}

}  // namespace canonkit
